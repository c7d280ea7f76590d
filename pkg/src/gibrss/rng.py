"""Deterministic, splittable random streams.

Every stochastic component (init, mask sampling, reparameterization
noise, shuffling, flips) draws from an RngStream identified by
(seed, stream id). Streams are counter-based (Philox), so the same
identifiers yield the same draws on every platform, and per-sample
substreams can be derived without coordination.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix(a, b):
    # splitmix64-style combine; keeps derived stream ids well separated
    z = (a ^ (b + 0x9E3779B97F4A7C15 + ((a << 6) & _MASK64) + (a >> 2))) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class RngStream:
    """A named pseudo-random stream with reproducible draw order.

    Two streams with the same (seed, stream) produce identical sequences;
    `split(tag)` derives an independent stream deterministically.
    """

    def __init__(self, seed, stream=0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))

    def split(self, tag):
        """Derive an independent stream keyed by an integer tag."""
        return RngStream(self.seed, _mix(self.stream, int(tag)))

    def normal(self, shape=()):
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def uniform(self, shape=(), low=0.0, high=1.0):
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low, high, shape=()):
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n):
        return self._gen.permutation(n)

    def logistic(self, shape=()):
        """Standard logistic noise, log(u) - log(1-u)."""
        u = self._gen.uniform(1e-12, 1.0 - 1e-12, size=shape)
        return np.log(u) - np.log1p(-u)
