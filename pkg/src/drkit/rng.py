"""Counter-based deterministic random numbers.

Algorithm (reproducible in any language with 64-bit unsigned arithmetic)::

    mix(z):  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
             z = (z ^ (z >> 27)) * 0x94D049BB133111EB
             return z ^ (z >> 31)                       (all mod 2**64)

    key      = mix(seed ^ 0x6A09E667F3BCC909)
    draw k   = mix(key + k * 0x9E3779B97F4A7C15),  k = 1, 2, 3, ...

A uniform float in [0, 1) is ``(draw >> 11) * 2**-53``. A normal variate uses
two consecutive uniforms u1, u2 and the Box-Muller cosine branch
``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``. Child streams are keyed by
``mix(key ^ mix(k + GOLDEN))`` folded over the child keys, with string keys
first reduced to 64 bits by BLAKE2b.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_SEED_SALT = 0x6A09E667F3BCC909
_INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def _key_int(k) -> int:
    if isinstance(k, str):
        return int.from_bytes(hashlib.blake2b(k.encode(), digest_size=8).digest(), "little")
    if isinstance(k, (int, np.integer)):
        return int(k) & MASK
    raise TypeError(f"rng keys must be int or str, got {type(k).__name__}")


class Rng:
    """Deterministic random stream. Single owner; do not share across threads."""

    def __init__(self, seed: int, *, _key: int | None = None):
        self.seed = int(seed) & MASK
        self.key = mix64(self.seed ^ _SEED_SALT) if _key is None else _key
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def child(self, *keys) -> "Rng":
        """Independent stream derived from this stream's key and ``keys``.

        Does not consume draws from the parent.
        """
        k = self.key
        for part in keys:
            k = mix64(k ^ mix64(_key_int(part) + GOLDEN))
        return Rng(self.seed, _key=k)

    def next_u64(self) -> int:
        self.counter += 1
        return mix64(self.key + self.counter * GOLDEN)

    def u64_array(self, n: int) -> np.ndarray:
        ctr = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64_array(np.uint64(self.key) + ctr * np.uint64(GOLDEN))

    def random(self) -> float:
        return (self.next_u64() >> 11) * _INV_2_53

    def random_array(self, n: int) -> np.ndarray:
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def uniform(self, lo: float, hi: float) -> float:
        if not lo < hi:
            raise ValueError(f"uniform needs lo < hi, got [{lo}, {hi})")
        return lo + (hi - lo) * self.random()

    def uniform_array(self, lo: float, hi: float, n: int) -> np.ndarray:
        if not lo < hi:
            raise ValueError(f"uniform needs lo < hi, got [{lo}, {hi})")
        return lo + (hi - lo) * self.random_array(n)

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        u1 = self.random()
        u2 = self.random()
        if sigma == 0:
            return float(mu)
        return mu + sigma * math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def normal_array(self, mu: float, sigma: float, n: int) -> np.ndarray:
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        u = self.random_array(2 * n)
        if sigma == 0:
            return np.full(n, float(mu))
        z = np.sqrt(-2.0 * np.log(1.0 - u[0::2])) * np.cos(2.0 * np.pi * u[1::2])
        return mu + sigma * z

    def integers(self, n: int, size: int) -> np.ndarray:
        """``size`` integers uniform on ``[0, n)``."""
        return np.minimum((self.random_array(size) * n).astype(np.int64), n - 1)

    def coin(self, p: float = 0.5) -> bool:
        return self.random() < p
