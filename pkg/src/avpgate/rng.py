"""Portable splitmix64 generator.

Every stochastic step in the package draws from this stream so results are
reproducible across platforms and languages. The scalar and the vectorised
draws consume the same underlying sequence.
"""

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 1.0 / (1 << 53)


def _mix(z):
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


class PortableRng:
    """splitmix64 with a 64-bit state."""

    __slots__ = ("state",)

    def __init__(self, seed=0):
        self.state = int(seed) & _MASK

    def __repr__(self):
        return f"PortableRng(state=0x{self.state:016x})"

    def next_u64(self):
        self.state = (self.state + _GAMMA) & _MASK
        return _mix(self.state)

    def uniform(self):
        """Float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _INV53

    def randbelow(self, n):
        if n <= 0:
            raise ValueError("n must be positive")
        return min(int(self.uniform() * n), n - 1)

    def gauss(self):
        # Box-Muller; one output per call keeps the stream easy to port.
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def shuffle(self, items):
        """In-place Fisher-Yates, walking from the end."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def spawn(self):
        """Independent child stream seeded from the next output."""
        return PortableRng(self.next_u64())

    # vectorised draws -------------------------------------------------

    def u64_array(self, n):
        if n == 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GAMMA) & _MASK
        return z

    def uniform_array(self, shape):
        n = int(np.prod(shape, dtype=np.int64))
        return ((self.u64_array(n) >> np.uint64(11)).astype(np.float64) * _INV53).reshape(shape)

    def gauss_array(self, shape):
        """Same values as repeated ``gauss()`` calls."""
        n = int(np.prod(shape, dtype=np.int64))
        u = self.uniform_array((n, 2))
        # libm rather than numpy's SIMD loops, which can differ by an ulp
        log, sqrt, cos, tau = math.log, math.sqrt, math.cos, 2.0 * math.pi
        out = [sqrt(-2.0 * log(1.0 - a)) * cos(tau * b) for a, b in u.tolist()]
        return np.array(out, dtype=np.float64).reshape(shape)
