"""Synthetic shapes dataset: generation, augmentation, on-disk format.

Every sample is a (3,H,W) float image in [0,1] plus an integer label map.
Class 0 is the background; foreground classes map to shape kinds
(rectangle, disk, ring, stripe) and, with textures on, each class gets its
own fill color and stripe pattern so appearance identifies the class even
when kinds repeat. Everything is a pure function of (spec, seed): sample i
draws from the counter-based stream (seed, i).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .config import config_from_text, dump_config
from .errors import ConfigError, FormatError
from .imgio import to_u8_unit, write_pgm, write_ppm
from .rng import SEED_AUGMENT, Stream
from .tensor import read_tensor, write_tensor

IGNORE = 255
DATASET_MAGIC = b"DNLD"
DATASET_VERSION = 1

KINDS = ("rectangle", "disk", "ring", "stripe")

# class -> RGB fill, cycled for many classes; background uses index 0
_PALETTE = np.array(
    [
        (0.20, 0.22, 0.25),
        (0.85, 0.45, 0.30),
        (0.35, 0.70, 0.45),
        (0.40, 0.50, 0.85),
        (0.80, 0.75, 0.35),
        (0.70, 0.40, 0.75),
        (0.45, 0.75, 0.80),
        (0.75, 0.55, 0.55),
    ]
)


@dataclass(frozen=True)
class ShapesSpec:
    height: int = 64
    width: int = 64
    num_classes: int = 4
    shapes_min: int = 1
    shapes_max: int = 2
    noise_sigma: float = 0.1
    textures: bool = True
    seed: int = 0
    class_kinds: Optional[Tuple[str, ...]] = None  # per-class kinds, index 0 = background

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("need at least background plus one shape class")
        if not (1 <= self.shapes_min <= self.shapes_max):
            raise ConfigError(f"bad shape count range [{self.shapes_min}, {self.shapes_max}]")
        if self.height < 16 or self.width < 16:
            raise ConfigError("canvas must be at least 16x16")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not self.textures and self.num_classes > 1 + len(KINDS):
            raise ConfigError(
                f"{self.num_classes} classes need textures: only {len(KINDS)} shape kinds")
        if self.class_kinds is not None:
            if len(self.class_kinds) != self.num_classes:
                raise ConfigError("class_kinds must list one kind per class")
            if self.class_kinds[0] != "background":
                raise ConfigError("class 0 kind must be 'background'")
            bad = [k for k in self.class_kinds[1:] if k not in KINDS]
            if bad:
                raise ConfigError(f"unknown shape kinds {bad}; choose from {KINDS}")

    def kind_of(self, cls: int) -> str:
        if self.class_kinds is not None:
            return self.class_kinds[cls]
        return KINDS[(cls - 1) % len(KINDS)]


@dataclass
class SegSample:
    image: np.ndarray   # (3,H,W) float64 in [0,1]
    labels: np.ndarray  # (H,W) uint8, values in [0,num_classes) or 255
    id: str


def _fill(cls: int, spec: ShapesSpec, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    """Per-class fill over the full canvas, shape (3,H,W)."""
    if not spec.textures:
        v = 0.25 if cls == 0 else 0.75
        return np.full((3, spec.height, spec.width), v)
    base = _PALETTE[cls % len(_PALETTE)][:, None, None]
    # class-specific stripe orientation and frequency
    angle = (cls * 2.399963229728653) % np.pi  # golden-angle spread
    freq = 2.0 * np.pi / (4.0 + 2.0 * (cls % 3))
    phase = np.cos(angle) * xx + np.sin(angle) * yy
    tex = 0.15 * np.sin(freq * phase)
    return np.clip(base + tex[None, :, :], 0.0, 1.0)


def _shape_mask(kind: str, spec: ShapesSpec, st: Stream,
                yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    h, w = spec.height, spec.width
    cy = int(st.randint(0, h - 1)[0])
    cx = int(st.randint(0, w - 1)[0])
    if kind == "rectangle":
        hh = int(st.randint(h // 12, h // 5)[0])
        hw = int(st.randint(w // 12, w // 5)[0])
        return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
    if kind == "disk":
        r = int(st.randint(h // 10, h // 4)[0])
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == "ring":
        r = int(st.randint(h // 7, h // 4)[0])
        rin = max(1, (r * 55) // 100)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        return (d2 <= r * r) & (d2 > rin * rin)
    if kind == "stripe":
        theta = float(st.uniform(1)[0]) * np.pi
        t = int(st.randint(h // 20, h // 10)[0])
        return np.abs(np.cos(theta) * (xx - cx) + np.sin(theta) * (yy - cy)) <= t
    raise ConfigError(f"unknown shape kind {kind!r}")


def generate_sample(spec: ShapesSpec, index: int) -> SegSample:
    st = Stream(spec.seed, index)
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w]

    shapes: List[Tuple[int, np.ndarray]] = []
    for cls in range(1, spec.num_classes):
        count = int(st.randint(spec.shapes_min, spec.shapes_max)[0])
        for _ in range(count):
            shapes.append((cls, _shape_mask(spec.kind_of(cls), spec, st, yy, xx)))
    order = st.permutation(len(shapes)) if shapes else []

    labels = np.zeros((h, w), dtype=np.uint8)
    image = _fill(0, spec, yy, xx).copy()
    for idx in order:
        cls, mask = shapes[idx]
        labels[mask] = cls
        fill = _fill(cls, spec, yy, xx)
        image[:, mask] = fill[:, mask]
    if spec.noise_sigma > 0:
        noise = st.normal(3 * h * w).reshape(3, h, w) * spec.noise_sigma
        image = np.clip(image + noise, 0.0, 1.0)
    return SegSample(image=image, labels=labels, id=f"{spec.seed:08x}-{index:05d}")


def generate(spec: ShapesSpec, n: int) -> List[SegSample]:
    if n < 1:
        raise ConfigError(f"sample count must be >= 1, got {n}")
    return [generate_sample(spec, i) for i in range(n)]


def class_census(samples, num_classes: int) -> dict:
    """Pixel counts per class and the fraction of samples containing each class."""
    pixels = np.zeros(num_classes, dtype=np.int64)
    presence = np.zeros(num_classes, dtype=np.int64)
    for s in samples:
        for cls in range(num_classes):
            cnt = int((s.labels == cls).sum())
            pixels[cls] += cnt
            presence[cls] += 1 if cnt else 0
    return {
        "pixels": pixels,
        "presence_fraction": presence / max(1, len(samples)),
    }


# ---------------------------------------------------------------------------
# augmentation: flip, scale in [0.5,2], crop; labels always nearest-neighbor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    hflip: bool = True
    scale_min: float = 0.5
    scale_max: float = 2.0
    crop: int = 64


def hflip(s: SegSample) -> SegSample:
    return SegSample(
        image=np.ascontiguousarray(s.image[:, :, ::-1]),
        labels=np.ascontiguousarray(s.labels[:, ::-1]),
        id=s.id,
    )


def rescale(s: SegSample, factor: float) -> SegSample:
    """Nearest-neighbor resample of image and labels by the same factor."""
    h, w = s.labels.shape
    nh = max(1, int(round(h * factor)))
    nw = max(1, int(round(w * factor)))
    rows = (np.arange(nh) * h) // nh
    cols = (np.arange(nw) * w) // nw
    return SegSample(
        image=np.ascontiguousarray(s.image[:, rows][:, :, cols]),
        labels=np.ascontiguousarray(s.labels[rows][:, cols]),
        id=s.id,
    )


def pad_to(s: SegSample, h: int, w: int) -> SegSample:
    """Bottom/right padding with zero pixels and the ignore label."""
    ch, cw = s.labels.shape
    if ch >= h and cw >= w:
        return s
    ph, pw = max(h, ch), max(w, cw)
    image = np.zeros((3, ph, pw), dtype=s.image.dtype)
    labels = np.full((ph, pw), IGNORE, dtype=np.uint8)
    image[:, :ch, :cw] = s.image
    labels[:ch, :cw] = s.labels
    return SegSample(image=image, labels=labels, id=s.id)


def crop(s: SegSample, top: int, left: int, h: int, w: int) -> SegSample:
    ch, cw = s.labels.shape
    if top < 0 or left < 0 or top + h > ch or left + w > cw:
        raise ConfigError(f"crop {h}x{w}@({top},{left}) outside {ch}x{cw}")
    return SegSample(
        image=np.ascontiguousarray(s.image[:, top : top + h, left : left + w]),
        labels=np.ascontiguousarray(s.labels[top : top + h, left : left + w]),
        id=s.id,
    )


def augment(s: SegSample, cfg: AugmentConfig, st: Stream) -> SegSample:
    """Random flip, scale, crop. Draw order is fixed: flip bit, scale, offsets."""
    out = s
    if cfg.hflip and st.choice_bool():
        out = hflip(out)
    factor = cfg.scale_min + float(st.uniform(1)[0]) * (cfg.scale_max - cfg.scale_min)
    out = rescale(out, factor)
    out = pad_to(out, cfg.crop, cfg.crop)
    ch, cw = out.labels.shape
    top = int(st.randint(0, ch - cfg.crop)[0])
    left = int(st.randint(0, cw - cfg.crop)[0])
    return crop(out, top, left, cfg.crop, cfg.crop)


def augment_stream(seed: int, iteration: int, slot: int) -> Stream:
    """The documented per-crop stream: id packs (iteration, batch slot)."""
    return Stream(seed + SEED_AUGMENT, iteration * 1024 + slot)


# ---------------------------------------------------------------------------
# on-disk dataset: magic "DNLD", version, spec echo, sample records
# ---------------------------------------------------------------------------

def save_dataset(path, samples: List[SegSample], spec: ShapesSpec) -> None:
    spec_blob = dump_config(spec).encode()
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<I", DATASET_VERSION))
        f.write(struct.pack("<I", len(spec_blob)))
        f.write(spec_blob)
        f.write(struct.pack("<I", len(samples)))
        for s in samples:
            sid = s.id.encode()
            f.write(struct.pack("<H", len(sid)))
            f.write(sid)
            h, w = s.labels.shape
            f.write(struct.pack("<II", h, w))
            f.write(s.labels.astype(np.uint8).tobytes())
            write_tensor(f, s.image)


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError("truncated dataset file")
    return buf


def load_dataset(path, expected_classes: Optional[int] = None):
    """Returns (samples, spec). Mismatched class count raises ConfigError."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DATASET_MAGIC:
            raise FormatError(f"bad dataset magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != DATASET_VERSION:
            raise FormatError(f"unsupported dataset version {version}")
        (spec_len,) = struct.unpack("<I", _read_exact(f, 4))
        spec = config_from_text(_read_exact(f, spec_len).decode(), ShapesSpec)
        if expected_classes is not None and spec.num_classes != expected_classes:
            raise ConfigError(
                f"dataset has {spec.num_classes} classes, run expects {expected_classes}")
        (n,) = struct.unpack("<I", _read_exact(f, 4))
        samples = []
        for _ in range(n):
            (idlen,) = struct.unpack("<H", _read_exact(f, 2))
            sid = _read_exact(f, idlen).decode()
            h, w = struct.unpack("<II", _read_exact(f, 8))
            labels = np.frombuffer(_read_exact(f, h * w), dtype=np.uint8).reshape(h, w).copy()
            image = read_tensor(f)
            samples.append(SegSample(image=image, labels=labels, id=sid))
        return samples, spec


def export_sample(s: SegSample, image_path, labels_path, num_classes: int) -> None:
    """PPM of the image and PGM of the labels for quick eyeballing."""
    write_ppm(image_path, to_u8_unit(s.image))
    step = 255 // max(1, num_classes - 1)
    vis = np.where(s.labels == IGNORE, 255, s.labels * step).astype(np.uint8)
    write_pgm(labels_path, vis)
