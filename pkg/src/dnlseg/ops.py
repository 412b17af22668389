"""Differentiable primitives over `Tensor`.

Forward kernels delegate data movement to the selected backend
(`backend.kernels`); the matrix math itself goes through numpy/BLAS. Every
op carries a hand-written adjoint. Shapes are checked strictly: elementwise
ops require identical shapes, the only broadcasting anywhere is
scalar-times-tensor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backend import kernels as K
from .errors import ConfigError, DataError, DimensionError
from .tensor import Tensor, make_op

IGNORE_LABEL = 255

# Negative-control switch for gradient verification: when set, conv weight
# adjoints are deliberately scaled so a finite-difference comparison fails.
_corrupt_adjoint = False


def set_corrupt_adjoint(flag: bool) -> None:
    global _corrupt_adjoint
    _corrupt_adjoint = flag


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise DimensionError(msg)


# ---------------------------------------------------------------------------
# elementwise and scalar ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, f"add shapes {a.shape} vs {b.shape}")
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return make_op(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, f"mul shapes {a.shape} vs {b.shape}")
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    return make_op(out, (a, b), bwd)


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    raise ConfigError(f"elementwise op must be add or mul, got {op!r}")


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (not a learnable scalar)."""
    out = a.data * c

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * c)

    return make_op(out, (a,), bwd)


def smul(s: Tensor, a: Tensor) -> Tensor:
    """Learnable scalar times tensor; the one permitted broadcast."""
    _require(s.size == 1, f"smul scalar must have one element, got {s.shape}")
    out = a.data * s.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * s.data)
        if s.requires_grad:
            s.accumulate_grad(np.sum(g * a.data).reshape(s.shape))

    return make_op(out, (s, a), bwd)


def tsum(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.dtype)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.full_like(a.data, float(g)))

    return make_op(out, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.ndim == 2 and b.data.ndim == 2, "matmul needs rank-2 tensors")
    _require(a.shape[1] == b.shape[0], f"matmul inner dims {a.shape} x {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return make_op(out, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    _require(a.data.ndim == 2, "transpose needs a rank-2 tensor")
    out = np.ascontiguousarray(a.data.T)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g.T)

    return make_op(out, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.shape))

    return make_op(out, (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0))

    return make_op(out, (a,), bwd)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise form avoids exp overflow on large negative inputs
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * out * (1.0 - out))

    return make_op(out, (a,), bwd)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction."""
    _require(a.data.ndim == 2, "softmax_rows needs a rank-2 tensor")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * out).sum(axis=1, keepdims=True)
            a.accumulate_grad(out * (g - dot))

    return make_op(out, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution and window extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    kernel: tuple
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    in_channels: int = 0
    out_channels: int = 0

    def __post_init__(self):
        kh, kw = self.kernel
        if kh < 1 or kw < 1 or self.stride < 1 or self.dilation < 1 or self.padding < 0:
            raise ConfigError(f"invalid conv spec {self}")

    def out_size(self, h: int, w: int) -> tuple:
        kh, kw = self.kernel
        ho = (h + 2 * self.padding - self.dilation * (kh - 1) - 1) // self.stride + 1
        wo = (w + 2 * self.padding - self.dilation * (kw - 1) - 1) // self.stride + 1
        if ho < 1 or wo < 1:
            raise DimensionError(f"conv output {ho}x{wo} for input {h}x{w} with {self}")
        return ho, wo


def conv2d(x: Tensor, w: Tensor, spec: ConvSpec) -> Tensor:
    """Dilated cross-correlation of (C_in,H,W) with (C_out,C_in,kh,kw), zero padded."""
    _require(x.data.ndim == 3, f"conv2d input must be C,H,W, got {x.shape}")
    _require(w.data.ndim == 4, f"conv2d weight must be Co,Ci,kh,kw, got {w.shape}")
    cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    _require(cin == cin_w, f"conv2d channels: input {cin}, weight expects {cin_w}")
    _require((kh, kw) == tuple(spec.kernel), f"kernel {w.shape} vs spec {spec.kernel}")
    if spec.in_channels and spec.in_channels != cin:
        raise DimensionError(f"spec in_channels {spec.in_channels} != input {cin}")
    if spec.out_channels and spec.out_channels != cout:
        raise DimensionError(f"spec out_channels {spec.out_channels} != weight {cout}")
    ho, wo = spec.out_size(h, wd)
    p, s, d = spec.padding, spec.stride, spec.dilation

    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    col = K.im2col(xp, kh, kw, s, d, ho, wo)
    w2 = w.data.reshape(cout, cin * kh * kw)
    out = (w2 @ col).reshape(cout, ho, wo)

    def bwd(g):
        g2 = g.reshape(cout, ho * wo)
        if w.requires_grad:
            dw = (g2 @ col.T).reshape(w.shape)
            if _corrupt_adjoint:
                dw = dw * 1.01
            w.accumulate_grad(dw)
        if x.requires_grad:
            dcol = w2.T @ g2
            dxp = K.col2im(dcol, cin, h + 2 * p, wd + 2 * p, kh, kw, s, d, ho, wo)
            dx = dxp[:, p : p + h, p : p + wd] if p else dxp
            x.accumulate_grad(dx)

    return make_op(out, (x, w), bwd)


def unfold(x: Tensor, k: int) -> Tensor:
    """(C,H,W) -> (N,C,k*k) window extraction, zero padded, k odd."""
    if k % 2 != 1 or k < 1:
        raise ConfigError(f"unfold window must be odd and positive, got {k}")
    _require(x.data.ndim == 3, f"unfold input must be C,H,W, got {x.shape}")
    c, h, w = x.shape
    p = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    out = K.unfold(xp, k, h, w)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(K.fold(g, c, h, w, k))

    return make_op(out, (x,), bwd)


def window_dot(q: Tensor, kunf: Tensor) -> Tensor:
    """out[p,u] = <q[p,:], kunf[p,:,u]> for per-pixel window similarities."""
    _require(q.data.ndim == 2 and kunf.data.ndim == 3, "window_dot ranks")
    _require(
        q.shape[0] == kunf.shape[0] and q.shape[1] == kunf.shape[1],
        f"window_dot shapes {q.shape} vs {kunf.shape}",
    )
    out = K.window_dot(q.data, kunf.data)

    def bwd(g):
        dq, dk = K.window_dot_backward(g, q.data, kunf.data)
        if q.requires_grad:
            q.accumulate_grad(dq)
        if kunf.requires_grad:
            kunf.accumulate_grad(dk)

    return make_op(out, (q, kunf), bwd)


def local_retention(a_prime: Tensor, s_l: Tensor, k: int, h: int, w: int) -> Tensor:
    """Smooth each query row of a_prime over k x k key windows weighted by s_l."""
    if k % 2 != 1 or k < 1:
        raise ConfigError(f"retention window must be odd and positive, got {k}")
    n = h * w
    _require(a_prime.data.ndim == 2 and a_prime.shape[1] == n,
             f"attention {a_prime.shape} vs {h}x{w} grid")
    _require(s_l.shape == (n, k * k), f"window weights {s_l.shape} vs ({n},{k * k})")
    out = K.lr_forward(a_prime.data, s_l.data, k, h, w)

    def bwd(g):
        dap, dsl = K.lr_backward(g, a_prime.data, s_l.data, k, h, w)
        if a_prime.requires_grad:
            a_prime.accumulate_grad(dap)
        if s_l.requires_grad:
            s_l.accumulate_grad(dsl)

    return make_op(out, (a_prime, s_l), bwd)


# ---------------------------------------------------------------------------
# pooling, resizing, concatenation
# ---------------------------------------------------------------------------

def global_avg_pool(x: Tensor) -> Tensor:
    _require(x.data.ndim == 3, f"global_avg_pool input must be C,H,W, got {x.shape}")
    c, h, w = x.shape
    out = x.data.mean(axis=(1, 2), keepdims=True)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g / (h * w), x.shape).copy())

    return make_op(out, (x,), bwd)


def broadcast_spatial(x: Tensor, h: int, w: int) -> Tensor:
    _require(x.data.ndim == 3 and x.shape[1] == 1 and x.shape[2] == 1,
             f"broadcast_spatial input must be C,1,1, got {x.shape}")
    out = np.broadcast_to(x.data, (x.shape[0], h, w)).copy()

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g.sum(axis=(1, 2), keepdims=True))

    return make_op(out, (x,), bwd)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    _require(x.data.ndim == 3, f"upsample input must be C,H,W, got {x.shape}")
    if factor < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {factor}")
    c, h, w = x.shape
    out = x.data.repeat(factor, axis=1).repeat(factor, axis=2)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)))

    return make_op(out, (x,), bwd)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    _require(len(parts) >= 1, "concat needs at least one tensor")
    hw = parts[0].shape[1:]
    for t in parts:
        _require(t.data.ndim == 3 and t.shape[1:] == hw,
                 f"concat spatial mismatch {t.shape} vs {hw}")
    out = np.concatenate([t.data for t in parts], axis=0)
    splits = np.cumsum([t.shape[0] for t in parts])[:-1]

    def bwd(g):
        for t, gpart in zip(parts, np.split(g, splits, axis=0)):
            if t.requires_grad:
                t.accumulate_grad(gpart)

    return make_op(out, tuple(parts), bwd)


def add_bias2d(x: Tensor, b: Tensor) -> Tensor:
    _require(x.data.ndim == 3 and b.data.ndim == 1 and b.shape[0] == x.shape[0],
             f"bias {b.shape} vs input {x.shape}")
    out = x.data + b.data[:, None, None]

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=(1, 2)))

    return make_op(out, (x, b), bwd)


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel statistics over the spatial axes, learnable affine.

    Statistics come from the tensor being normalized (same rule in train and
    eval), so a forward is a pure function of its input.
    """
    _require(x.data.ndim == 3, f"norm input must be C,H,W, got {x.shape}")
    c = x.shape[0]
    _require(gamma.shape == (c,) and beta.shape == (c,),
             f"norm affine shapes {gamma.shape}, {beta.shape} for {c} channels")
    mu = x.data.mean(axis=(1, 2), keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def bwd(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(1, 2)))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(1, 2)))
        if x.requires_grad:
            dxhat = g * gamma.data[:, None, None]
            m1 = dxhat.mean(axis=(1, 2), keepdims=True)
            m2 = (dxhat * xhat).mean(axis=(1, 2), keepdims=True)
            x.accumulate_grad(inv * (dxhat - m1 - xhat * m2))

    return make_op(out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def cross_entropy(logits: Tensor, labels: np.ndarray, ignore: int = IGNORE_LABEL) -> Tensor:
    """Mean pixelwise cross-entropy from raw logits; ignored pixels excluded.

    With zero scoreable pixels the loss is defined as 0 with zero gradient.
    """
    _require(logits.data.ndim == 3, f"logits must be C,H,W, got {logits.shape}")
    cn = logits.shape[0]
    if labels.shape != logits.shape[1:]:
        raise DimensionError(f"labels {labels.shape} vs logits {logits.shape}")
    bad = ~(((labels >= 0) & (labels < cn)) | (labels == ignore))
    if bad.any():
        raise DataError(f"labels outside [0,{cn}) and not {ignore}: {np.unique(labels[bad])}")

    valid = labels != ignore
    n = int(valid.sum())
    if n == 0:
        return make_op(np.asarray(0.0, dtype=logits.dtype), (logits,), lambda g: None)

    z = logits.data - logits.data.max(axis=0, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=0, keepdims=True))
    logp = z - lse
    ys, xs = np.nonzero(valid)
    cls = labels[ys, xs]
    out = np.asarray(-logp[cls, ys, xs].sum() / n, dtype=logits.dtype)

    def bwd(g):
        if logits.requires_grad:
            scale_ = float(g) / n
            d = np.exp(logp) * (valid * scale_)
            d[cls, ys, xs] -= scale_
            logits.accumulate_grad(d)

    return make_op(out, (logits,), bwd)
