"""Deterministic, portable random number streams.

Everything random in this package flows through `Stream`, a counter-based
generator built on the SplitMix64 finalizer so that any run is reproducible
bitwise from (seed, stream_id) alone and bulk draws vectorize in numpy.

Update equations (all arithmetic mod 2**64):

    GOLDEN = 0x9E3779B97F4A7C15

    mix(z):  z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
             z ^= z >> 27;  z *= 0x94D049BB133111EB
             z ^= z >> 31;  return z

    stream state   s0  = mix(seed ^ mix(stream_id * GOLDEN + 1))
    i-th raw draw  u_i = mix(s0 + i * GOLDEN)        for i = 1, 2, ...

Derived draws:

    uniform in [0,1):  (u >> 11) * 2**-53
    normal:            Box-Muller on consecutive uniform pairs, with
                       u1 shifted to (0,1] as ((u >> 11) + 1) * 2**-53
    randint in [lo,hi]: lo + u % (hi - lo + 1)
    permutation(n):    stable argsort of n raw draws

Sub-seeds for the different phases of a run are `seed + fixed offset`
(see the SEED_* constants); per-item streams then use the item index as
stream_id.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)

# Fixed sub-seed offsets (documented splitting contract).
SEED_DATA = 0
SEED_INIT = 101
SEED_SHUFFLE = 202
SEED_AUGMENT = 303
SEED_GRADCHECK = 404

_INV53 = float(2.0**-53)


def mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over uint64 arrays."""
    z = z ^ (z >> np.uint64(30))
    z = (z * _M1) & _MASK
    z = z ^ (z >> np.uint64(27))
    z = (z * _M2) & _MASK
    return z ^ (z >> np.uint64(31))


def mix64_int(z: int) -> int:
    """Same finalizer on python ints (mod 2**64), for scalar seeding."""
    z &= 0xFFFFFFFFFFFFFFFF
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & 0xFFFFFFFFFFFFFFFF
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


class Stream:
    """One named random stream: counter-based, stateful only in its counter."""

    def __init__(self, seed: int, stream_id: int = 0):
        s = seed & 0xFFFFFFFFFFFFFFFF
        t = stream_id & 0xFFFFFFFFFFFFFFFF
        s0 = mix64_int(s ^ mix64_int((t * 0x9E3779B97F4A7C15 + 1) & 0xFFFFFFFFFFFFFFFF))
        self._s0 = np.uint64(s0)
        self._i = 0

    def raw(self, n: int) -> np.ndarray:
        """Next n raw uint64 draws."""
        idx = np.arange(self._i + 1, self._i + n + 1, dtype=np.uint64)
        self._i += n
        return mix64((self._s0 + idx * _GOLDEN) & _MASK)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1)."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _INV53

    def normal(self, n: int) -> np.ndarray:
        """n standard normal doubles via Box-Muller."""
        m = (n + 1) // 2
        u1 = ((self.raw(m) >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _INV53
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        a = 2.0 * np.pi * u2
        return np.concatenate([r * np.cos(a), r * np.sin(a)])[:n]

    def randint(self, lo: int, hi: int, n: int = 1) -> np.ndarray:
        """n ints uniform in [lo, hi] inclusive (modulo reduction)."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = np.uint64(hi - lo + 1)
        return (lo + (self.raw(n) % span).astype(np.int64)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Permutation of range(n) by stable argsort of raw keys."""
        return np.argsort(self.raw(n), kind="stable")

    def choice_bool(self) -> bool:
        return bool(self.raw(1)[0] & np.uint64(1))
