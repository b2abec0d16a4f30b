"""Counter-based random streams.

Every word of a stream is a pure function of ``(seed, counter)``::

    word(seed, i) = splitmix64_mix(seed + (i + 1) * 0x9E3779B97F4A7C15)   (mod 2**64)

    splitmix64_mix(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)

Uniform doubles take the top 53 bits: ``u = (word >> 11) * 2**-53`` in [0, 1).
Gaussians use Box-Muller on consecutive pairs ``(u1, u2)``::

    r = sqrt(-2 ln(1 - u1));  z0 = r cos(2 pi u2);  z1 = r sin(2 pi u2)

Sub-streams for distinct purposes derive from the master seed with
``derive(seed, label, *ints)``: the label is hashed with 64-bit FNV-1a, each
integer is folded in, and the result goes through ``splitmix64_mix``.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _fnv1a(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & _MASK
    return h


def derive(seed: int, label: str, *ints: int) -> int:
    """Deterministic sub-seed for ``label`` (and optional indices) under ``seed``."""
    h = mix64((seed & _MASK) ^ _fnv1a(label))
    for k in ints:
        h = mix64(h ^ mix64((k & _MASK) + _GAMMA))
    return h


def _mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps modulo 2**64
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """Seeded stream of 64-bit words; ``counter`` counts words consumed."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK
        self.counter = int(counter)

    def spawn(self, label: str, *ints: int) -> "Rng":
        return Rng(derive(self.seed, label, *ints))

    def words(self, n: int) -> np.ndarray:
        i = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        z = np.uint64(self.seed) + i * np.uint64(_GAMMA)
        return _mix64_array(z)

    def uniform(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.words(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape)

    def normal(self, size, std: float = 1.0) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return std * z[:n].reshape(shape)

    def below(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)``."""
        return min(int(self.uniform(1)[0] * bound), bound - 1)

    def permutation(self, n: int) -> np.ndarray:
        return self.choice(n, n, sort=False)

    def choice(self, n: int, k: int, sort: bool = True) -> np.ndarray:
        """``k`` distinct values from ``range(n)`` by partial Fisher-Yates."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} distinct values from {n}")
        pool = np.arange(n, dtype=np.int64)
        u = self.uniform(k)
        for i in range(k):
            j = i + min(int(u[i] * (n - i)), n - i - 1)
            pool[i], pool[j] = pool[j], pool[i]
        out = pool[:k].copy()
        return np.sort(out) if sort else out
