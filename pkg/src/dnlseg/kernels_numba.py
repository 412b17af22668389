"""Numba-jitted twins of the kernels in `kernels_numpy`.

Same call signatures and semantics; compiled lazily per dtype with on-disk
caching. Kept branch-free of fastmath so both backends agree to rounding
order on float64.
"""

from __future__ import annotations

import os

import numpy as np
from numba import njit, set_num_threads

from .kernels_numpy import neighbor_index

NAME = "numba"

_threads = os.environ.get("DNL_THREADS")
if _threads:
    try:
        set_num_threads(max(1, min(int(_threads), os.cpu_count() or 1)))
    except ValueError:
        pass


@njit(cache=True)
def _im2col(xp, kh, kw, stride, dil, hout, wout):
    c = xp.shape[0]
    col = np.empty((c * kh * kw, hout * wout), dtype=xp.dtype)
    for ch in range(c):
        for ki in range(kh):
            for kj in range(kw):
                row = (ch * kh + ki) * kw + kj
                for i in range(hout):
                    si = i * stride + ki * dil
                    base = i * wout
                    for j in range(wout):
                        col[row, base + j] = xp[ch, si, j * stride + kj * dil]
    return col


@njit(cache=True)
def _col2im(dcol, c, hp, wp, kh, kw, stride, dil, hout, wout):
    dxp = np.zeros((c, hp, wp), dtype=dcol.dtype)
    for ch in range(c):
        for ki in range(kh):
            for kj in range(kw):
                row = (ch * kh + ki) * kw + kj
                for i in range(hout):
                    si = i * stride + ki * dil
                    base = i * wout
                    for j in range(wout):
                        dxp[ch, si, j * stride + kj * dil] += dcol[row, base + j]
    return dxp


@njit(cache=True)
def _unfold(xp, k, h, w):
    c = xp.shape[0]
    out = np.empty((h * w, c, k * k), dtype=xp.dtype)
    for r in range(h):
        for cc in range(w):
            p = r * w + cc
            for ch in range(c):
                u = 0
                for di in range(k):
                    for dj in range(k):
                        out[p, ch, u] = xp[ch, r + di, cc + dj]
                        u += 1
    return out


@njit(cache=True)
def _fold(dout, c, h, w, k):
    p = (k - 1) // 2
    dxp = np.zeros((c, h + 2 * p, w + 2 * p), dtype=dout.dtype)
    for r in range(h):
        for cc in range(w):
            pos = r * w + cc
            for ch in range(c):
                u = 0
                for di in range(k):
                    for dj in range(k):
                        dxp[ch, r + di, cc + dj] += dout[pos, ch, u]
                        u += 1
    return dxp[:, p : p + h, p : p + w].copy()


@njit(cache=True)
def _lr_forward(ap, sl, nidx):
    nq, n = ap.shape
    kk = sl.shape[1]
    out = np.zeros_like(ap)
    for q in range(nq):
        for j in range(n):
            acc = 0.0
            for u in range(kk):
                nj = nidx[j, u]
                if nj >= 0:
                    acc += sl[j, u] * ap[q, nj]
            out[q, j] = acc
    return out


@njit(cache=True)
def _lr_backward(dout, ap, sl, nidx):
    nq, n = ap.shape
    kk = sl.shape[1]
    dap = np.zeros_like(ap)
    dsl = np.zeros_like(sl)
    for q in range(nq):
        for j in range(n):
            g = dout[q, j]
            for u in range(kk):
                nj = nidx[j, u]
                if nj >= 0:
                    dap[q, nj] += g * sl[j, u]
                    dsl[j, u] += g * ap[q, nj]
    return dap, dsl


@njit(cache=True)
def _window_dot(q, kunf):
    n, c = q.shape
    kk = kunf.shape[2]
    out = np.empty((n, kk), dtype=q.dtype)
    for p in range(n):
        for u in range(kk):
            acc = 0.0
            for ch in range(c):
                acc += q[p, ch] * kunf[p, ch, u]
            out[p, u] = acc
    return out


@njit(cache=True)
def _window_dot_backward(dout, q, kunf):
    n, c = q.shape
    kk = kunf.shape[2]
    dq = np.zeros_like(q)
    dk = np.empty_like(kunf)
    for p in range(n):
        for ch in range(c):
            acc = 0.0
            for u in range(kk):
                acc += dout[p, u] * kunf[p, ch, u]
                dk[p, ch, u] = q[p, ch] * dout[p, u]
            dq[p, ch] = acc
    return dq, dk


def im2col(xp, kh, kw, stride, dil, hout, wout):
    return _im2col(np.ascontiguousarray(xp), kh, kw, stride, dil, hout, wout)


def col2im(dcol, c, hp, wp, kh, kw, stride, dil, hout, wout):
    return _col2im(np.ascontiguousarray(dcol), c, hp, wp, kh, kw, stride, dil, hout, wout)


def unfold(xp, k, h, w):
    return _unfold(np.ascontiguousarray(xp), k, h, w)


def fold(dout, c, h, w, k):
    return _fold(np.ascontiguousarray(dout), c, h, w, k)


def lr_forward(ap, sl, k, h, w):
    nidx = neighbor_index(h, w, k)
    return _lr_forward(np.ascontiguousarray(ap), np.ascontiguousarray(sl), nidx)


def lr_backward(dout, ap, sl, k, h, w):
    nidx = neighbor_index(h, w, k)
    return _lr_backward(
        np.ascontiguousarray(dout),
        np.ascontiguousarray(ap),
        np.ascontiguousarray(sl),
        nidx,
    )


def window_dot(q, kunf):
    return _window_dot(np.ascontiguousarray(q), np.ascontiguousarray(kunf))


def window_dot_backward(dout, q, kunf):
    return _window_dot_backward(
        np.ascontiguousarray(dout), np.ascontiguousarray(q), np.ascontiguousarray(kunf)
    )
