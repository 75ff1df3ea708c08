"""Seeded pseudo-random generator used everywhere randomness is needed.

The generator is splitmix64: a 64-bit counter advanced by a fixed odd
increment, pushed through an avalanche mix to produce each output word.
Because each output depends only on the counter value, array draws and
derived per-item seeds are pure functions of (seed, index), which keeps
data generation and training bit-reproducible across runs and platforms.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps, matching the scalar path bit for bit
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, index: int) -> int:
    """Independent child seed for item `index` of a stream seeded by `seed`."""
    return _mix((_mix(seed) + (index + 1) * _GAMMA) & _MASK)


class Rng:
    """splitmix64 stream; state is the single 64-bit counter."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        return _mix(self.state)

    def _u64_array(self, n: int) -> np.ndarray:
        base = np.uint64(self.state)
        steps = (np.arange(1, n + 1, dtype=np.uint64)) * np.uint64(_GAMMA)
        out = _mix_array(base + steps)
        self.state = (self.state + n * _GAMMA) & _MASK
        return out

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        # top 53 bits give a double in [0, 1)
        u = self.next_u64() >> 11
        return lo + (hi - lo) * (u * 2.0**-53)

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        u = (self._u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (lo + (hi - lo) * u).reshape(shape)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer on [lo, hi] inclusive (floor of a scaled uniform)."""
        if hi < lo:
            raise ValueError(f"empty integer range [{lo}, {hi}]")
        n = hi - lo + 1
        v = lo + int(self.uniform() * n)
        return min(v, hi)

    def randint_array(self, shape, lo: int, hi: int) -> np.ndarray:
        if hi < lo:
            raise ValueError(f"empty integer range [{lo}, {hi}]")
        n = hi - lo + 1
        u = self.uniform_array(shape)
        return np.minimum((u * n).astype(np.int64) + lo, hi)

    def normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def normal_array(self, shape) -> np.ndarray:
        """Box-Muller pairs; odd counts discard the spare draw."""
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u1 = self.uniform_array((m,))
        u2 = self.uniform_array((m,))
        r = np.sqrt(-2.0 * np.log(1.0 - u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape)
