"""Seedable, splittable random streams.

Every simulator and sampler in the package draws from a ``Stream``: a
numpy ``Generator`` backed by the Philox-4x64 counter-based bit generator.
Child streams for per-trajectory or per-replica work are derived from a
master seed with SplitMix64, so the i-th child of a given master seed is the
same on every platform and independent of how work is scheduled.

Sampling of exponential and uniform variates goes through explicit inverse
CDFs on top of ``Generator.random`` (53-bit doubles), which keeps outputs
byte-stable across numpy versions that change their ziggurat internals.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 output for state ``x`` (after the golden-ratio increment)."""
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def child_seed(seed: int, index: int) -> int:
    """Seed of the ``index``-th child stream of ``seed``."""
    return splitmix64((seed & _MASK64) ^ splitmix64(index & _MASK64))


def child_seeds(seed: int, n: int) -> list[int]:
    return [child_seed(seed, i) for i in range(n)]


class Stream:
    """Buffered uniform source with inverse-CDF helpers.

    Parameters
    ----------
    seed : int
        64-bit seed; the Philox key is derived from it via SplitMix64.
    block : int
        Number of uniforms fetched per refill. Does not change the values
        produced, only the call pattern.
    """

    def __init__(self, seed: int, block: int = 4096):
        self.seed = int(seed) & _MASK64
        key = [splitmix64(self.seed), splitmix64(self.seed ^ _GOLDEN)]
        self.gen = np.random.Generator(np.random.Philox(key=np.array(key, dtype=np.uint64)))
        self._block = block
        self._buf: list[float] = []
        self._pos = 0

    def uniform(self) -> float:
        """A double in [0, 1)."""
        if self._pos >= len(self._buf):
            self._buf = self.gen.random(self._block).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)])

    def exponential(self, rate: float) -> float:
        return -math.log1p(-self.uniform()) / rate

    def uniform_range(self, a: float, b: float) -> float:
        return a + (b - a) * self.uniform()

    def choice(self, weights) -> int:
        """Index drawn with probability proportional to ``weights``."""
        total = float(sum(weights))
        u = self.uniform() * total
        acc = 0.0
        for i, w in enumerate(weights):
            acc += w
            if u < acc:
                return i
        # float round-off at the top end
        for i in range(len(weights) - 1, -1, -1):
            if weights[i] > 0:
                return i
        raise ValueError("all weights are zero")

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return min(int(self.uniform() * n), n - 1)

    def normal(self) -> float:
        """Standard normal via the inverse CDF."""
        from scipy.special import ndtri

        u = self.uniform()
        while u == 0.0:
            u = self.uniform()
        return float(ndtri(u))

    def spawn(self, index: int) -> "Stream":
        return Stream(child_seed(self.seed, index), self._block)
