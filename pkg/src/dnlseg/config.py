"""Flat typed key-value config files.

Grammar: one `key = value` per line, `#` starts a comment, blank lines
ignored. Values are typed by the target dataclass field: int, float, bool
(`true`/`false`), str, comma-separated tuples, and `none` for optionals.
`dump_config` materializes every field in declaration order, so a dumped
config is the fully resolved form used in manifests and checkpoints.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from typing import Optional, Tuple

from .errors import ConfigError


def parse_kv_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, val = body.partition("=")
        key = key.strip()
        val = val.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = val
    return out


def _coerce(raw: str, ftype, key: str):
    origin = typing.get_origin(ftype)
    if origin is typing.Union:
        args = [a for a in typing.get_args(ftype) if a is not type(None)]
        if raw.lower() == "none":
            return None
        return _coerce(raw, args[0], key)
    if origin is tuple:
        elem = typing.get_args(ftype)[0]
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(_coerce(p, elem, key) for p in parts)
    if ftype is bool:
        low = raw.lower()
        if low in ("true", "false"):
            return low == "true"
        raise ConfigError(f"{key}: expected true/false, got {raw!r}")
    if ftype is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected int, got {raw!r}") from None
    if ftype is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected float, got {raw!r}") from None
    if ftype is str:
        return raw
    raise ConfigError(f"{key}: unsupported config field type {ftype}")


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_from_text(text: str, cls, overrides: Optional[dict] = None):
    """Parse config text into dataclass `cls`; unknown keys are errors."""
    raw = parse_kv_text(text)
    if overrides:
        raw.update({k: _format(v) if not isinstance(v, str) else v for k, v in overrides.items()})
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {key: _coerce(val, hints[key], key) for key, val in raw.items()}
    return cls(**kwargs)


def load_config(path, cls, overrides: Optional[dict] = None):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return config_from_text(text, cls, overrides)


def dump_config(obj) -> str:
    """All fields in declaration order, one per line; the resolved form."""
    lines = [
        f"{f.name} = {_format(getattr(obj, f.name))}"
        for f in dataclasses.fields(obj)
    ]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TrainConfig:
    # model
    image_channels: int = 3
    stem_widths: Tuple[int, ...] = (16, 32, 64, 64)
    channels: int = 64
    reduced_channels: int = 8
    num_classes: int = 4
    window: int = 3
    gamma_init: float = 0.0
    norm_eps: float = 1e-5
    head_channels: int = 64
    gctx_channels: int = 16
    use_gr: bool = True
    use_lr: bool = True
    pclass_softmax: bool = False
    dtype: str = "f64"
    # loss
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda_gr: float = 0.4
    # optimizer
    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    power: float = 0.9
    # schedule
    epochs: int = 30
    batch_size: int = 4
    crop: int = 64
    # augmentation
    hflip: bool = True
    scale_min: float = 0.5
    scale_max: float = 2.0
    # run
    seed: int = 0
    ckpt_every: int = 0  # extra checkpoints every n iterations; 0 = final only

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.crop < 16:
            raise ConfigError("bad schedule: epochs >= 0, batch_size >= 1, crop >= 16")
        if self.crop % 16 != 0:
            raise ConfigError(f"crop must be divisible by 16, got {self.crop}")
        if not (0.0 < self.scale_min <= self.scale_max):
            raise ConfigError(f"bad scale range [{self.scale_min}, {self.scale_max}]")

    def net_config(self):
        from .network import NetConfig

        return NetConfig(
            image_channels=self.image_channels,
            stem_widths=tuple(self.stem_widths),
            channels=self.channels,
            reduced_channels=self.reduced_channels,
            num_classes=self.num_classes,
            window=self.window,
            gamma_init=self.gamma_init,
            norm_eps=self.norm_eps,
            head_channels=self.head_channels,
            gctx_channels=self.gctx_channels,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            lambda_gr=self.lambda_gr,
            use_gr=self.use_gr,
            use_lr=self.use_lr,
            pclass_softmax=self.pclass_softmax,
            dtype=self.dtype,
        )
