"""Pure-numpy reference implementations of the hot gather/scatter kernels.

Each function here has a numba twin in `kernels_numba`; `backend` picks one
set at import time. All kernels are allocation-in, allocation-out and never
mutate their inputs. Matrix products themselves are left to BLAS in `ops`;
these kernels only move data (im2col/col2im, window extraction) or perform
the windowed attention smoothing.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

NAME = "numpy"


@lru_cache(maxsize=64)
def neighbor_index(h: int, w: int, k: int) -> np.ndarray:
    """Index table n[j, u] = flat neighbor of pixel j at window slot u, -1 if outside."""
    half = (k - 1) // 2
    rr = np.arange(h)[:, None, None, None]
    cc = np.arange(w)[None, :, None, None]
    di = np.arange(k)[None, None, :, None]
    dj = np.arange(k)[None, None, None, :]
    nr = rr + di - half
    nc = cc + dj - half
    idx = nr * w + nc
    idx[(nr < 0) | (nr >= h) | (nc < 0) | (nc >= w)] = -1
    return idx.reshape(h * w, k * k)


def im2col(xp, kh, kw, stride, dil, hout, wout):
    """Padded image (C, Hp, Wp) -> patch matrix (C*kh*kw, hout*wout)."""
    c = xp.shape[0]
    col = np.empty((c, kh, kw, hout, wout), dtype=xp.dtype)
    for ki in range(kh):
        for kj in range(kw):
            col[:, ki, kj] = xp[
                :,
                ki * dil : ki * dil + (hout - 1) * stride + 1 : stride,
                kj * dil : kj * dil + (wout - 1) * stride + 1 : stride,
            ]
    return col.reshape(c * kh * kw, hout * wout)


def col2im(dcol, c, hp, wp, kh, kw, stride, dil, hout, wout):
    """Adjoint of im2col: scatter-add patch gradients back to (C, Hp, Wp)."""
    dc = dcol.reshape(c, kh, kw, hout, wout)
    dxp = np.zeros((c, hp, wp), dtype=dcol.dtype)
    for ki in range(kh):
        for kj in range(kw):
            dxp[
                :,
                ki * dil : ki * dil + (hout - 1) * stride + 1 : stride,
                kj * dil : kj * dil + (wout - 1) * stride + 1 : stride,
            ] += dc[:, ki, kj]
    return dxp


def unfold(xp, k, h, w):
    """Padded image (C, H+2p, W+2p) -> windows (N, C, k*k), N = H*W."""
    c = xp.shape[0]
    out = np.empty((k * k, c, h * w), dtype=xp.dtype)
    u = 0
    for di in range(k):
        for dj in range(k):
            out[u] = xp[:, di : di + h, dj : dj + w].reshape(c, h * w)
            u += 1
    return np.ascontiguousarray(out.transpose(2, 1, 0))


def fold(dout, c, h, w, k):
    """Adjoint of unfold: (N, C, k*k) gradients -> image gradient (C, H, W)."""
    p = (k - 1) // 2
    dxp = np.zeros((c, h + 2 * p, w + 2 * p), dtype=dout.dtype)
    d = np.ascontiguousarray(dout.transpose(2, 1, 0)).reshape(k * k, c, h, w)
    u = 0
    for di in range(k):
        for dj in range(k):
            dxp[:, di : di + h, dj : dj + w] += d[u]
            u += 1
    return np.ascontiguousarray(dxp[:, p : p + h, p : p + w])


def lr_forward(ap, sl, k, h, w):
    """Windowed smoothing of per-query attention rows.

    out[q, j] = sum_u sl[j, u] * ap[q, neighbor_u(j)], zero outside the image.
    """
    nq = ap.shape[0]
    half = (k - 1) // 2
    a3 = ap.reshape(nq, h, w)
    out = np.zeros_like(a3)
    u = 0
    for di in range(k):
        for dj in range(k):
            oi = di - half
            oj = dj - half
            r0, r1 = max(0, -oi), min(h, h - oi)
            c0, c1 = max(0, -oj), min(w, w - oj)
            if r0 < r1 and c0 < c1:
                slu = sl[:, u].reshape(h, w)
                out[:, r0:r1, c0:c1] += (
                    a3[:, r0 + oi : r1 + oi, c0 + oj : c1 + oj] * slu[r0:r1, c0:c1]
                )
            u += 1
    return out.reshape(nq, h * w)


def lr_backward(dout, ap, sl, k, h, w):
    """Gradients of lr_forward w.r.t. the attention rows and the window weights."""
    nq = ap.shape[0]
    half = (k - 1) // 2
    a3 = ap.reshape(nq, h, w)
    d3 = dout.reshape(nq, h, w)
    dap = np.zeros_like(a3)
    dsl = np.zeros_like(sl)
    u = 0
    for di in range(k):
        for dj in range(k):
            oi = di - half
            oj = dj - half
            r0, r1 = max(0, -oi), min(h, h - oi)
            c0, c1 = max(0, -oj), min(w, w - oj)
            if r0 < r1 and c0 < c1:
                slu = sl[:, u].reshape(h, w)
                dap[:, r0 + oi : r1 + oi, c0 + oj : c1 + oj] += (
                    d3[:, r0:r1, c0:c1] * slu[r0:r1, c0:c1]
                )
                dslu = dsl[:, u].reshape(h, w)
                dslu[r0:r1, c0:c1] += (
                    d3[:, r0:r1, c0:c1] * a3[:, r0 + oi : r1 + oi, c0 + oj : c1 + oj]
                ).sum(axis=0)
            u += 1
    return dap.reshape(nq, h * w), dsl


def window_dot(q, kunf):
    """out[p, u] = sum_c q[p, c] * kunf[p, c, u]."""
    return np.einsum("pc,pcu->pu", q, kunf)


def window_dot_backward(dout, q, kunf):
    dq = np.einsum("pu,pcu->pc", dout, kunf)
    dk = q[:, :, None] * dout[:, None, :]
    return dq, dk
