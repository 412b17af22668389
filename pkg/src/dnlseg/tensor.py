"""Dense tensor with reverse-mode autodiff and the binary tensor format.

A `Tensor` wraps one numpy array (row-major, float64 by default, float32 as
an opt-in for speed) plus an optional gradient buffer. Differentiable
operations (see `ops`) record their parents and a hand-written adjoint
closure; `backward()` on a scalar result replays the tape in reverse
topological order. Tensors are treated as immutable once created, except
for the gradient slot and the optimizer's in-place parameter update.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import FormatError, UsageError

DEFAULT_DTYPE = np.float64

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, optimizer steps)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data: np.ndarray = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=DEFAULT_DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Populate grads of every requires_grad tensor reaching this scalar."""
        if self.data.size != 1:
            raise UsageError(f"backward requires a scalar root, got shape {self.shape}")
        order = _toposort(self)
        self.accumulate_grad(np.ones_like(self.data))
        for t in reversed(order):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor) -> list:
    """Iterative DFS topological order; deterministic for a fixed op order."""
    order: list = []
    visited: set = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result, recording the adjoint only when the tape is live."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = tuple(parents)
        out._backward = backward_fn
        return out
    return Tensor(data)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    """Build a tensor from array-like data, defaulting to float64."""
    arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
    return Tensor(arr, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or DEFAULT_DTYPE), requires_grad=requires_grad)


def backward(root: Tensor) -> None:
    root.backward()


# ---------------------------------------------------------------------------
# Binary tensor format: magic "DNLT", u32 version, u8 rank, u64 extents,
# float64 payload, all little-endian.
# ---------------------------------------------------------------------------

TENSOR_MAGIC = b"DNLT"
TENSOR_VERSION = 1


def write_tensor(f, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    f.write(TENSOR_MAGIC)
    f.write(struct.pack("<I", TENSOR_VERSION))
    f.write(struct.pack("<B", arr.ndim))
    for ext in arr.shape:
        f.write(struct.pack("<Q", ext))
    f.write(arr.astype("<f8").tobytes())


def read_tensor(f) -> np.ndarray:
    magic = f.read(4)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(f, 4))
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor format version {version}")
    (rank,) = struct.unpack("<B", _read_exact(f, 1))
    shape = tuple(struct.unpack("<Q", _read_exact(f, 8))[0] for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    payload = _read_exact(f, 8 * count)
    return np.frombuffer(payload, dtype="<f8").reshape(shape).copy()


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError("truncated tensor data")
    return buf


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        write_tensor(f, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f)
