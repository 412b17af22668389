"""Denoised non-local attention.

Pipeline over a feature map F (C,H,W) with N = H*W positions:

  1. 1x1 projections give queries Q (N,C'), keys K (C',N), values V (N,C).
  2. A = row-softmax(Q K) is the raw pairwise attention map.
  3. Global rectifying: coarse class logits (C_n,N) from a 1x1 head feed a
     sigmoid Gram map P_class = sigmoid(PcT Pc); A' = A * P_class damps
     cross-class weight.
  4. Local retention: per-pixel window similarities S_l[j,u] =
     sigmoid(Q_j . K_window(j)[u]) smooth each query's spatial map,
     A''[q,j] = sum_u S_l[j,u] A'[q, neighbor_u(j)], filling in-object
     hollows.
  5. Residual aggregation: F'_j = gamma * sum_i A''[j,i] V_i + F_j.

No renormalization happens after steps 3-4; rows of A' and A'' are
deliberately sub-stochastic. The window slides over the key axis: each
query row, viewed as an H x W map, is smoothed around every key pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops
from .errors import ConfigError
from .tensor import Tensor, tensor


@dataclass(frozen=True)
class DenoisedNLConfig:
    channels: int
    reduced_channels: int
    num_classes: int
    window: int = 3
    gamma_init: float = 0.0
    use_gr: bool = True
    use_lr: bool = True
    pclass_softmax: bool = False  # squash coarse logits to class probabilities first
    pclass_ones: bool = False     # debug: force P_class to all-ones

    def __post_init__(self):
        if self.reduced_channels < 1 or self.reduced_channels >= self.channels:
            raise ConfigError(
                f"reduced channels must be in [1, {self.channels}), got {self.reduced_channels}")
        if self.window % 2 != 1 or self.window < 1:
            raise ConfigError(f"window must be odd and positive, got {self.window}")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be positive, got {self.num_classes}")


@dataclass
class AttentionState:
    """The attention maps of one forward: raw, inter-class denoised, intra-class denoised."""

    a: Tensor
    a_prime: Tensor
    a_dprime: Tensor
    p_class: Optional[Tensor] = None
    s_l: Optional[Tensor] = None


@dataclass
class AttentionParams:
    """Learnable tensors of the block, a view into the owning model's params."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    w_coarse: Tensor
    b_coarse: Tensor
    gamma: Tensor


def _conv1x1(x: Tensor, w: Tensor) -> Tensor:
    spec = ops.ConvSpec(kernel=(1, 1))
    return ops.conv2d(x, w, spec)


def pairwise_attention(q: Tensor, k: Tensor) -> Tensor:
    """A = row-softmax(Q K): row i is query i's distribution over positions."""
    return ops.softmax_rows(ops.matmul(q, k))


def coarse_predict(f: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Per-pixel class logits via 1x1 conv, reshaped to (C_n, N). No activation."""
    out = _conv1x1(f, w)
    if b is not None:
        out = ops.add_bias2d(out, b)
    cn = out.shape[0]
    return ops.reshape(out, (cn, out.shape[1] * out.shape[2]))


def global_rectify(p_coarse: Tensor, softmax_probs: bool = False) -> Tensor:
    """Soft same-class map P_class = sigmoid(PcT Pc); symmetric, in (0,1)."""
    pc = p_coarse
    if softmax_probs:
        pc = ops.transpose(ops.softmax_rows(ops.transpose(pc)))
    return ops.sigmoid(ops.matmul(ops.transpose(pc), pc))


def apply_global_rectify(a: Tensor, p_class: Tensor) -> Tensor:
    """A' = A * P_class, elementwise; no renormalization."""
    return ops.mul(a, p_class)


def local_similarity(q: Tensor, k_unfolded: Tensor) -> Tensor:
    """S_l[p,u] = sigmoid(Q_p . K_window(p)[u]); window anchored at the key pixel."""
    return ops.sigmoid(ops.window_dot(q, k_unfolded))


def local_retention(a_prime: Tensor, s_l: Tensor, k: int, h: int, w: int) -> Tensor:
    """A''[q,j] = sum_u S_l[j,u] A'[q, neighbor_u(j)], zero outside the image."""
    return ops.local_retention(a_prime, s_l, k, h, w)


def aggregate(a_dprime: Tensor, v: Tensor, f: Tensor, gamma: Tensor) -> Tensor:
    """F'_j = gamma * sum_i A''[j,i] V_i + F_j, reshaped back to (C,H,W)."""
    c, h, w = f.shape
    y = ops.matmul(a_dprime, v)
    y3 = ops.reshape(ops.transpose(y), (c, h, w))
    return ops.add(ops.smul(gamma, y3), f)


def denoised_nl_forward(f: Tensor, params: AttentionParams, cfg: DenoisedNLConfig):
    """Full block: projections, raw attention, GR, LR, residual aggregation.

    Returns (augmented feature, attention state, coarse logits or None).
    """
    c, h, w = f.shape
    if c != cfg.channels:
        raise ConfigError(f"feature has {c} channels, config says {cfg.channels}")
    n = h * w

    qm = _conv1x1(f, params.wq)
    km = _conv1x1(f, params.wk)
    vm = _conv1x1(f, params.wv)
    q = ops.transpose(ops.reshape(qm, (cfg.reduced_channels, n)))  # (N, C')
    k2 = ops.reshape(km, (cfg.reduced_channels, n))                # (C', N)
    v = ops.transpose(ops.reshape(vm, (cfg.channels, n)))          # (N, C)

    a = pairwise_attention(q, k2)

    p_coarse = None
    p_class = None
    a_prime = a
    if cfg.use_gr:
        p_coarse = coarse_predict(f, params.w_coarse, params.b_coarse)
        if cfg.pclass_ones:
            p_class = tensor(np.ones((n, n), dtype=a.data.dtype))
        else:
            p_class = global_rectify(p_coarse, cfg.pclass_softmax)
        a_prime = apply_global_rectify(a, p_class)

    s_l = None
    a_dprime = a_prime
    if cfg.use_lr:
        k_unf = ops.unfold(km, cfg.window)
        s_l = local_similarity(q, k_unf)
        a_dprime = local_retention(a_prime, s_l, cfg.window, h, w)

    f_out = aggregate(a_dprime, v, f, params.gamma)
    state = AttentionState(a=a, a_prime=a_prime, a_dprime=a_dprime, p_class=p_class, s_l=s_l)
    return f_out, state, p_coarse
