"""Seeded splitmix64 streams.

Output ``i`` of the stream seeded with ``s`` is ``mix(s + (i + 1) * GAMMA)``
modulo 2**64, so any implementation can reproduce it bit for bit:

    mix(z):  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
             z = (z ^ (z >> 27)) * 0x94D049BB133111EB
             return z ^ (z >> 31)

Uniforms take the top 53 bits (``(u >> 11) * 2**-53``); normals use the
Box-Muller cosine branch on consecutive uniform pairs.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MUL1
    z = (z ^ (z >> np.uint64(27))) * _MUL2
    return z ^ (z >> np.uint64(31))


def mix64(value: int) -> int:
    """Scalar splitmix64 finalizer."""
    z = value & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed for ``keys`` (e.g. a slide index); independent of call order."""
    z = seed & MASK64
    for key in keys:
        z = mix64((z ^ mix64(key & MASK64)) + GAMMA)
    return z


class SplitMix64:
    """Counter-based splitmix64 generator."""

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.counter = 0

    def next_uint64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs."""
        # Python ints keep the (i + 1) * GAMMA product exact before reduction.
        offsets = [((self.counter + i + 1) * GAMMA + self.seed) & MASK64 for i in range(n)]
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.array(offsets, dtype=np.uint64))

    def uniform(self, size=()) -> np.ndarray:
        """Floats in [0, 1)."""
        n = int(np.prod(size, dtype=np.int64))
        bits = self.next_uint64(n) >> np.uint64(11)
        return (bits.astype(np.float64) * 2.0**-53).reshape(size)

    def normal(self, size=(), scale: float = 1.0) -> np.ndarray:
        """Standard normal draws (times ``scale``)."""
        n = int(np.prod(size, dtype=np.int64))
        u = self.uniform((n, 2))
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        return (scale * radius * np.cos(2.0 * np.pi * u[:, 1])).reshape(size)

    def integers(self, low: int, high: int, size=()) -> np.ndarray:
        """Integers in the closed range [low, high]."""
        span = high - low + 1
        draws = np.floor(self.uniform(size) * span).astype(np.int64)
        return low + np.minimum(draws, span - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Seeded permutation of ``range(n)``."""
        return np.argsort(self.uniform(n), kind="stable")
