"""SplitMix64 random streams.

Everything random in the package (region layout, distortion strengths,
noise fields, initialization, patch sampling) is drawn from these streams,
so results depend only on seeds and never on numpy's global state, the
platform, or thread scheduling.

Child streams: ``child(seed, index) = splitmix64(seed ^ golden_mix(index))``
where ``golden_mix(i) = mix64(i * GOLDEN)`` and ``splitmix64(x)`` is the first
output of a SplitMix64 stream seeded with ``x``.
"""
from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def splitmix64(x: int) -> int:
    return mix64((x + GOLDEN) & MASK64)


def golden_mix(index: int) -> int:
    return mix64((index * GOLDEN) & MASK64)


def child_seed(seed: int, index: int) -> int:
    return splitmix64((seed & MASK64) ^ golden_mix(index))


def string_id(text: str) -> int:
    """Stable 64-bit id for a string (image names, split names)."""
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def _mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps modulo 2**64
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """A SplitMix64 stream. Not thread-safe; derive children for parallel work."""

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.state = self.seed

    def child(self, index: int) -> "Rng":
        return Rng(child_seed(self.seed, index))

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN)
        out = _mix64_array(steps + np.uint64(self.state))
        self.state = (self.state + n * GOLDEN) & MASK64
        return out

    def random(self, n: int | None = None):
        """Uniform floats in [0, 1) with 53 bits of resolution."""
        if n is None:
            return (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def integer(self, low: int, high: int) -> int:
        """Uniform integer in the closed range [low, high]."""
        if high < low:
            raise ValueError(f"empty integer range [{low}, {high}]")
        return low + int(self.random() * (high - low + 1))

    def randn(self, shape, dtype=np.float64) -> np.ndarray:
        """Standard normals via Box-Muller on the stream."""
        shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self.random(2 * pairs)
        u1, u2 = 1.0 - u[0::2], u[1::2]  # u1 in (0, 1]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n].reshape(shape).astype(dtype, copy=False)
