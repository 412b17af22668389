"""Binary PGM/PPM writers for eyeballing samples and attention maps."""

from __future__ import annotations

import numpy as np


def write_pgm(path, gray: np.ndarray) -> None:
    """8-bit binary PGM from a (H,W) uint8 array."""
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ValueError(f"PGM wants (H,W) uint8, got {gray.shape} {gray.dtype}")
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(gray.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    """8-bit binary PPM from a (3,H,W) uint8 array."""
    if rgb.ndim != 3 or rgb.shape[0] != 3 or rgb.dtype != np.uint8:
        raise ValueError(f"PPM wants (3,H,W) uint8, got {rgb.shape} {rgb.dtype}")
    h, w = rgb.shape[1:]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(rgb.transpose(1, 2, 0)).tobytes())


def to_u8_minmax(x: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0,255]; a constant map becomes all zeros."""
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        return np.zeros(x.shape, dtype=np.uint8)
    return np.clip(np.rint((x - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)


def to_u8_unit(x: np.ndarray) -> np.ndarray:
    """Map [0,1] floats to [0,255] with clipping."""
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)
