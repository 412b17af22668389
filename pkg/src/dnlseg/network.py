"""The trainable segmentation model around the denoised attention block.

Layout: a 4-stage conv stem (three stride-2 stages to stride 8, then one
dilated stage) with taps after stages 2 and 3 for deep supervision, a
reduction block down to stride 16, the attention block, a global-context
branch, and a conv head that fuses everything back at stride 8.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import ops
from .attention import AttentionParams, DenoisedNLConfig, denoised_nl_forward
from .errors import ConfigError, DimensionError, FormatError
from .rng import SEED_INIT, Stream
from .tensor import Tensor, read_tensor, write_tensor

CHECKPOINT_MAGIC = b"DNLC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    image_channels: int = 3
    stem_widths: Tuple[int, int, int, int] = (16, 32, 64, 64)
    channels: int = 64
    reduced_channels: int = 8
    num_classes: int = 4
    window: int = 3
    gamma_init: float = 0.0
    norm_eps: float = 1e-5
    head_channels: int = 64
    gctx_channels: int = 16
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda_gr: float = 0.4
    use_gr: bool = True
    use_lr: bool = True
    pclass_softmax: bool = False
    pclass_ones: bool = False
    dtype: str = "f64"

    def __post_init__(self):
        if len(self.stem_widths) != 4 or any(w < 1 for w in self.stem_widths):
            raise ConfigError(f"stem_widths needs 4 positive ints, got {self.stem_widths}")
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda_gr < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.dtype not in ("f64", "f32"):
            raise ConfigError(f"dtype must be f64 or f32, got {self.dtype!r}")
        # delegate attention-side validation
        self.attention_config()

    def attention_config(self) -> DenoisedNLConfig:
        return DenoisedNLConfig(
            channels=self.channels,
            reduced_channels=self.reduced_channels,
            num_classes=self.num_classes,
            window=self.window,
            gamma_init=self.gamma_init,
            use_gr=self.use_gr,
            use_lr=self.use_lr,
            pclass_softmax=self.pclass_softmax,
            pclass_ones=self.pclass_ones,
        )

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "f64" else np.float32


class ModelParams:
    """Named learnable tensors with deterministic iteration order."""

    def __init__(self):
        self._tensors: Dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise ConfigError(f"duplicate parameter {name!r}")
        t = Tensor(data, requires_grad=True)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def items(self):
        return self._tensors.items()

    def names(self):
        return list(self._tensors.keys())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def census(self) -> Dict[str, int]:
        """Element count per parameter plus a grand total."""
        counts = {name: t.size for name, t in self._tensors.items()}
        counts["total"] = sum(counts.values())
        return counts

    def copy(self) -> "ModelParams":
        out = ModelParams()
        for name, t in self._tensors.items():
            out.add(name, t.data.copy())
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self._tensors):
            missing = set(self._tensors) - set(arrays)
            extra = set(arrays) - set(self._tensors)
            raise ConfigError(f"parameter set mismatch: missing {missing}, extra {extra}")
        for name, arr in arrays.items():
            t = self._tensors[name]
            if tuple(arr.shape) != t.shape:
                raise ConfigError(f"shape mismatch for {name}: {arr.shape} vs {t.shape}")
            t.data = arr.astype(t.data.dtype)

    def attention_view(self) -> AttentionParams:
        return AttentionParams(
            wq=self["att.q"],
            wk=self["att.k"],
            wv=self["att.v"],
            w_coarse=self["att.coarse.w"],
            b_coarse=self["att.coarse.b"],
            gamma=self["att.gamma"],
        )


def init_params(cfg: NetConfig, seed: int) -> ModelParams:
    """He-style init from the documented seed stream; order fixes the draws."""
    rs = Stream(seed + SEED_INIT)
    dt = cfg.np_dtype
    p = ModelParams()

    def conv(name, cout, cin, k):
        fan_in = cin * k * k
        w = rs.normal(cout * fan_in).reshape(cout, cin, k, k) * np.sqrt(2.0 / fan_in)
        p.add(name, w.astype(dt))

    def norm(name, c):
        p.add(f"{name}.gamma", np.ones(c, dtype=dt))
        p.add(f"{name}.beta", np.zeros(c, dtype=dt))

    def bias(name, c):
        p.add(name, np.zeros(c, dtype=dt))

    w1, w2, w3, w4 = cfg.stem_widths
    conv("stem.1.conv", w1, cfg.image_channels, 3)
    norm("stem.1.norm", w1)
    conv("stem.2.conv", w2, w1, 3)
    norm("stem.2.norm", w2)
    conv("stem.3.conv", w3, w2, 3)
    norm("stem.3.norm", w3)
    conv("stem.4.conv", w4, w3, 3)
    norm("stem.4.norm", w4)

    conv("red.reduce", cfg.channels, w4, 1)
    conv("red.conv1", cfg.channels, cfg.channels, 3)
    conv("red.conv2", cfg.channels, cfg.channels, 3)
    conv("red.proj", cfg.channels, cfg.channels, 1)

    conv("att.q", cfg.reduced_channels, cfg.channels, 1)
    conv("att.k", cfg.reduced_channels, cfg.channels, 1)
    conv("att.v", cfg.channels, cfg.channels, 1)
    conv("att.coarse.w", cfg.num_classes, cfg.channels, 1)
    bias("att.coarse.b", cfg.num_classes)
    p.add("att.gamma", np.asarray(cfg.gamma_init, dtype=dt))

    conv("gctx.w", cfg.gctx_channels, w4, 1)
    bias("gctx.b", cfg.gctx_channels)

    cat_ch = w4 + cfg.channels + cfg.gctx_channels
    conv("head.conv", cfg.head_channels, cat_ch, 3)
    norm("head.norm", cfg.head_channels)
    conv("head.out.w", cfg.num_classes, cfg.head_channels, 1)
    bias("head.out.b", cfg.num_classes)

    conv("aux2.w", cfg.num_classes, w2, 1)
    bias("aux2.b", cfg.num_classes)
    conv("aux3.w", cfg.num_classes, w3, 1)
    bias("aux3.b", cfg.num_classes)
    return p


def _conv_norm_relu(x, p: ModelParams, name, spec, eps):
    y = ops.conv2d(x, p[f"{name}.conv"], spec)
    y = ops.batch_norm2d(y, p[f"{name}.norm.gamma"], p[f"{name}.norm.beta"], eps)
    return ops.relu(y)


def stem_forward(img: Tensor, p: ModelParams, cfg: NetConfig):
    """Three stride-2 stages to stride 8, then one dilated stage; taps after 2 and 3."""
    c, h, w = img.shape
    if h % 16 != 0 or w % 16 != 0:
        raise ConfigError(f"input {h}x{w} must be divisible by 16")
    s2 = ops.ConvSpec(kernel=(3, 3), stride=2, padding=1)
    t1 = _conv_norm_relu(img, p, "stem.1", s2, cfg.norm_eps)
    res2 = _conv_norm_relu(t1, p, "stem.2", s2, cfg.norm_eps)
    res3 = _conv_norm_relu(res2, p, "stem.3", s2, cfg.norm_eps)
    dil = ops.ConvSpec(kernel=(3, 3), stride=1, dilation=2, padding=2)
    x = _conv_norm_relu(res3, p, "stem.4", dil, cfg.norm_eps)
    return x, res2, res3


def reduction_forward(x: Tensor, p: ModelParams, cfg: NetConfig) -> Tensor:
    """1x1 channel mix, then a stride-2 basic block with a projected skip."""
    _, h, w = x.shape
    if h % 2 != 0 or w % 2 != 0:
        raise ConfigError(f"reduction needs even spatial extents, got {h}x{w}")
    y = ops.conv2d(x, p["red.reduce"], ops.ConvSpec(kernel=(1, 1)))
    h1 = ops.relu(ops.conv2d(y, p["red.conv1"], ops.ConvSpec(kernel=(3, 3), stride=2, padding=1)))
    h2 = ops.conv2d(h1, p["red.conv2"], ops.ConvSpec(kernel=(3, 3), padding=1))
    skip = ops.conv2d(y, p["red.proj"], ops.ConvSpec(kernel=(1, 1), stride=2))
    return ops.relu(ops.add(h2, skip))


def head_forward(x: Tensor, f_prime: Tensor, p: ModelParams, cfg: NetConfig) -> Tensor:
    """Concat [X; up(F'); global ctx] then 3x3 conv, norm, ReLU, 1x1 to logits."""
    _, hx, wx = x.shape
    if (f_prime.shape[1] * 2, f_prime.shape[2] * 2) != (hx, wx):
        raise DimensionError(f"F' {f_prime.shape} does not upsample 2x onto X {x.shape}")
    up = ops.upsample_nearest(f_prime, 2)
    g = ops.add_bias2d(
        ops.conv2d(ops.global_avg_pool(x), p["gctx.w"], ops.ConvSpec(kernel=(1, 1))),
        p["gctx.b"],
    )
    gb = ops.broadcast_spatial(g, hx, wx)
    cat = ops.concat_channels([x, up, gb])
    h = ops.conv2d(cat, p["head.conv"], ops.ConvSpec(kernel=(3, 3), padding=1))
    h = ops.batch_norm2d(h, p["head.norm.gamma"], p["head.norm.beta"], cfg.norm_eps)
    h = ops.relu(h)
    logits = ops.add_bias2d(
        ops.conv2d(h, p["head.out.w"], ops.ConvSpec(kernel=(1, 1))), p["head.out.b"]
    )
    return logits


def model_forward(img: Tensor, p: ModelParams, cfg: NetConfig):
    """Full forward.

    Returns (logits at stride 8, aux logits from the two stem taps,
    coarse logits or None, attention state).
    """
    x, res2, res3 = stem_forward(img, p, cfg)
    f = reduction_forward(x, p, cfg)
    f_prime, state, p_coarse = denoised_nl_forward(f, p.attention_view(), cfg.attention_config())
    logits = head_forward(x, f_prime, p, cfg)
    aux2 = ops.add_bias2d(ops.conv2d(res2, p["aux2.w"], ops.ConvSpec(kernel=(1, 1))), p["aux2.b"])
    aux3 = ops.add_bias2d(ops.conv2d(res3, p["aux3.w"], ops.ConvSpec(kernel=(1, 1))), p["aux3.b"])
    return logits, aux2, aux3, p_coarse, state


def _upsampled_ce(logits: Tensor, labels: np.ndarray) -> Tensor:
    lh, lw = labels.shape
    _, h, w = logits.shape
    factor = lh // h
    if factor < 1 or lh != h * factor or lw != w * factor:
        raise DimensionError(f"labels {labels.shape} not an integer upsample of {logits.shape}")
    up = ops.upsample_nearest(logits, factor) if factor > 1 else logits
    return ops.cross_entropy(up, labels)


def joint_loss_terms(
    logits: Tensor,
    aux2: Tensor,
    aux3: Tensor,
    coarse: Optional[Tensor],
    labels: np.ndarray,
    cfg: NetConfig,
    grid: Optional[Tuple[int, int]] = None,
):
    """Principal + auxiliary + coarse cross-entropies; returns (total, parts).

    `coarse` arrives flattened (C_n, N); `grid` gives its (h, w) if it cannot
    be inferred from the label shape.
    """
    lp = _upsampled_ce(logits, labels)
    l1 = _upsampled_ce(aux2, labels)
    l2 = _upsampled_ce(aux3, labels)
    total = lp
    if cfg.lambda1 != 0.0:
        total = ops.add(total, ops.scale(l1, cfg.lambda1))
    if cfg.lambda2 != 0.0:
        total = ops.add(total, ops.scale(l2, cfg.lambda2))
    lgr = None
    if coarse is not None and cfg.lambda_gr != 0.0:
        if grid is None:
            gh, gw = labels.shape[0] // 16, labels.shape[1] // 16
        else:
            gh, gw = grid
        coarse3 = ops.reshape(coarse, (cfg.num_classes, gh, gw))
        lgr = _upsampled_ce(coarse3, labels)
        total = ops.add(total, ops.scale(lgr, cfg.lambda_gr))
    parts = {
        "lp": lp.item(),
        "l1": l1.item(),
        "l2": l2.item(),
        "lgr": lgr.item() if lgr is not None else 0.0,
    }
    return total, parts


def joint_loss(logits, aux2, aux3, coarse, labels, cfg: NetConfig, grid=None) -> Tensor:
    return joint_loss_terms(logits, aux2, aux3, coarse, labels, cfg, grid)[0]


# ---------------------------------------------------------------------------
# checkpoints: magic "DNLC", version, iteration, config echo, named tensors
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, cfg_text: str, iteration: int) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", iteration))
        blob = cfg_text.encode()
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        names = params.names()
        f.write(struct.pack("<I", len(names)))
        for name in names:
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            write_tensor(f, params[name].data)


def load_checkpoint(path):
    """Returns (arrays by name, config echo text, iteration)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (iteration,) = struct.unpack("<Q", f.read(8))
        (cfg_len,) = struct.unpack("<I", f.read(4))
        cfg_text = f.read(cfg_len).decode()
        (count,) = struct.unpack("<I", f.read(4))
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode()
            arrays[name] = read_tensor(f)
        return arrays, cfg_text, iteration
