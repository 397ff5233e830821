"""32-bit Mersenne Twister and the piecewise-constant random coefficient blocks."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from numba import njit

_N = 624
_M = 397
_MATRIX_A = 0x9908B0DF
_UPPER = 0x80000000
_LOWER = 0x7FFFFFFF
_MASK = 0xFFFFFFFF


@njit(cache=True)
def _seed_state(seed):
    mt = np.empty(_N, dtype=np.uint64)
    mt[0] = seed & _MASK
    for i in range(1, _N):
        prev = mt[i - 1]
        mt[i] = (np.uint64(1812433253) * (prev ^ (prev >> np.uint64(30))) + np.uint64(i)) & np.uint64(_MASK)
    return mt


@njit(cache=True)
def _twist(mt):
    for i in range(_N):
        y = (mt[i] & np.uint64(_UPPER)) | (mt[(i + 1) % _N] & np.uint64(_LOWER))
        v = mt[(i + _M) % _N] ^ (y >> np.uint64(1))
        if y & np.uint64(1):
            v ^= np.uint64(_MATRIX_A)
        mt[i] = v


@njit(cache=True)
def _temper(y):
    y ^= y >> np.uint64(11)
    y ^= (y << np.uint64(7)) & np.uint64(0x9D2C5680)
    y ^= (y << np.uint64(15)) & np.uint64(0xEFC60000)
    y ^= y >> np.uint64(18)
    return y & np.uint64(_MASK)


@njit(cache=True)
def _first_outputs(seed, count):
    """The first ``count`` (<= 624) outputs after seeding."""
    mt = _seed_state(np.uint64(seed))
    _twist(mt)
    out = np.empty(count, dtype=np.uint64)
    for k in range(count):
        out[k] = _temper(mt[k])
    return out


class MT19937:
    """Standard 32-bit Mersenne Twister (the generator behind std::mt19937)."""

    def __init__(self, seed: int = 5489):
        self._mt = _seed_state(np.uint64(int(seed) & _MASK))
        self._index = _N

    def next_u32(self) -> int:
        if self._index >= _N:
            _twist(self._mt)
            self._index = 0
        y = _temper(self._mt[self._index])
        self._index += 1
        return int(y)

    def random(self) -> float:
        """Uniform on [0, 1): one 32-bit output divided by 2^32."""
        return self.next_u32() / 4294967296.0


def round_half_away(x: float) -> int:
    """Nearest integer, ties away from zero (C's round)."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


_PRIMES = (2, 3, 5)


def block_seed(x, n: int) -> int:
    """psi(x, n) = sum_k round(x_k n) p_k mod 2^32 with p = (2, 3, 5)."""
    return sum(round_half_away(float(xk) * n) * p for xk, p in zip(x, _PRIMES)) % (1 << 32)


@lru_cache(maxsize=1 << 16)
def _block_for_seed(seed: int, d: int) -> np.ndarray:
    b = (_first_outputs(seed, d * d).astype(np.float64) / 4294967296.0).reshape(d, d)
    den = 8.0 if d == 2 else 10.0
    a = (b + b.T + 4.0 * np.eye(d)) / den
    a.setflags(write=False)
    return a


def mt19937_block_matrix(x, n: int, d: int | None = None) -> np.ndarray:
    """A_psi(x, n) = (B + B^T + 4I) / den with den 8 in 2d and 10 in 3d.

    B is filled row-major with the first d^2 variates of a generator seeded
    with psi(x, n); the result is constant on each block of the lattice
    (Z / n)^d.
    """
    x = np.asarray(x, dtype=float)
    d = len(x) if d is None else d
    if n < 1:
        raise ValueError("block count must be at least 1")
    return _block_for_seed(block_seed(x, n), d).copy()


def gershgorin_bounds(d: int) -> tuple[float, float]:
    """Eigenvalue enclosure of A_psi for entries of B in [0, 1)."""
    den = 8.0 if d == 2 else 10.0
    return (4.0 - 2.0 * (d - 1)) / den, (4.0 + 2.0 * d) / den
