"""Seeded SplitMix64 generator.

Draw i (1-based) of a stream with state s is ``mix(s + i * GAMMA)`` where
GAMMA = 0x9E3779B97F4A7C15 and ``mix`` is the splitmix64 finalizer

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

with all arithmetic modulo 2**64. Doubles take the top 53 bits:
``(u >> 11) * 2**-53``. Being counter based, a whole block of draws is one
vectorised numpy expression, and any implementation of the same recipe
reproduces the same sequence.
"""

from __future__ import annotations

import hashlib
from typing import Sequence, Tuple

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.seed = int(seed) & _MASK64
        self._state = np.uint64(self.seed)
        self._drawn = 0

    @property
    def drawn(self) -> int:
        """Number of 64-bit words consumed so far."""
        return self._drawn

    def next_u64(self, n: int) -> np.ndarray:
        n = int(n)
        if n < 0:
            raise ValueError("n must be non-negative")
        with np.errstate(over="ignore"):
            steps = np.arange(self._drawn + 1, self._drawn + n + 1, dtype=np.uint64)
            z = self._state + steps * GAMMA
            out = _mix(z)
        self._drawn += n
        return out

    def random(self, size: int | Tuple[int, ...] = 1) -> np.ndarray:
        """Uniform doubles in [0, 1)."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        u = self.next_u64(n) >> np.uint64(11)
        return (u.astype(np.float64) * (1.0 / 9007199254740992.0)).reshape(shape)

    def uniform(self, low: float, high: float, size: int | Tuple[int, ...] = 1) -> np.ndarray:
        return low + (high - low) * self.random(size)

    def normal(self, size: int | Tuple[int, ...] = 1) -> np.ndarray:
        """Standard normals by Box-Muller, two uniforms per draw."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        u = self.random(2 * n).reshape(2, n)
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        return (r * np.cos(2.0 * np.pi * u[1])).reshape(shape)

    def integers(self, high: int, size: int | Tuple[int, ...] = 1) -> np.ndarray:
        """Integers in [0, high) by floor(u * high)."""
        if high < 1:
            raise ValueError("high must be >= 1")
        return np.minimum(np.floor(self.random(size) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n), one draw per swap."""
        perm = np.arange(n, dtype=np.int64)
        if n < 2:
            return perm
        u = self.random(n - 1)
        for idx, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[idx] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def choice(self, items: Sequence, k: int) -> list:
        """k distinct items, in the order drawn."""
        if k > len(items):
            raise ValueError(f"cannot choose {k} of {len(items)} items")
        perm = self.permutation(len(items))
        return [items[int(i)] for i in perm[:k]]

    def spawn(self, tag: str | int) -> "SplitMix64":
        """Independent child stream derived from this seed and a tag."""
        digest = hashlib.sha256(f"{self.seed}:{tag}".encode("utf-8")).digest()
        return SplitMix64(int.from_bytes(digest[:8], "little"))
