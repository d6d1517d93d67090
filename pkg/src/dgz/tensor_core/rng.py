"""Seeded random streams: splitmix64 integers feeding a Box-Muller transform.

The algorithm is fixed so that golden files can be shared across
implementations: the k-th 64-bit draw (k = 1, 2, ...) of a stream with
state ``s`` is ``mix(s + k * GOLDEN)``; uniforms take the top 53 bits;
normals consume uniforms in pairs ``(u1, u2)`` and emit
``r*cos(2*pi*u2), r*sin(2*pi*u2)`` with ``r = sqrt(-2 ln(1 - u1))``.
An odd trailing normal discards its sine partner.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def mix64(x):
    """Scalar splitmix64 finalizer."""
    return int(_mix(np.array([x & MASK64], dtype=np.uint64))[0])


class Rng:
    """Deterministic random stream.

    Same seed and same call sequence give the same samples on every
    platform.  Not thread-safe; give each thread its own substream.
    """

    def __init__(self, seed):
        self.seed = int(seed) & MASK64
        self._state = self.seed

    def __repr__(self):
        return f"Rng(seed={self.seed}, state={self._state})"

    def substream(self, key):
        """Independent stream seeded with ``seed XOR key``."""
        return Rng(self.seed ^ (int(key) & MASK64))

    def fork(self):
        """Child stream seeded from the next draw of this one."""
        return Rng(int(self.next_u64(1)[0]))

    def next_u64(self, n):
        n = int(n)
        if n == 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self._state) + steps * np.uint64(GOLDEN)
            out = _mix(z)
        self._state = (self._state + n * GOLDEN) & MASK64
        return out

    def uniform(self, size=None):
        """Uniform floats in [0, 1)."""
        shape = () if size is None else (size if isinstance(size, tuple) else (size,))
        n = int(np.prod(shape, dtype=np.int64))
        bits = self.next_u64(n) >> np.uint64(11)
        u = bits.astype(np.float64) * (1.0 / (1 << 53))
        return u.reshape(shape) if shape else float(u[0])

    def normal(self, size=None):
        """Standard normal draws via Box-Muller."""
        shape = () if size is None else (size if isinstance(size, tuple) else (size,))
        n = int(np.prod(shape, dtype=np.int64))
        if n == 0:
            return np.zeros(shape)
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        out = out[:n]
        return out.reshape(shape) if shape else float(out[0])

    def integers(self, low, high=None, size=None):
        """Integers in ``[low, high)`` (or ``[0, low)`` if ``high`` is omitted) from scaled uniforms."""
        if high is None:
            low, high = 0, low
        span = high - low
        if span <= 0:
            raise ValueError("integers: empty range")
        u = np.asarray(self.uniform(size))
        out = low + np.minimum((u * span).astype(np.int64), span - 1)
        return int(out) if size is None else out

    def permutation(self, n):
        """Random permutation of range(n): stable argsort of ``n`` uniforms."""
        if n < 2:
            return np.arange(n)
        return np.argsort(self.uniform(n), kind="stable")

    def choice(self, n, k):
        """``k`` distinct indices from range(n), in random order."""
        if k > n:
            raise ValueError(f"cannot choose {k} of {n}")
        return self.permutation(n)[:k]
