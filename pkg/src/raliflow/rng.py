"""Counter-based deterministic random number generation.

The generator is splitmix64 applied to a (seed, counter) pair:

    state   = (seed + GOLDEN * counter) mod 2^64        GOLDEN = 0x9E3779B97F4A7C15
    z       = state
    z       = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9      mod 2^64
    z       = (z ^ (z >> 27)) * 0x94D049BB133111EB      mod 2^64
    output  = z ^ (z >> 31)

Every draw is a pure function of (seed, counter), so streams can be
re-derived from scratch in any language and scenes are reproducible from
their config alone.  Uniform doubles take the top 53 bits of the output;
normals use the Box-Muller transform on two consecutive uniforms.
"""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)

_U53 = np.float64(1.0 / (1 << 53))


def _mix(state: np.ndarray) -> np.ndarray:
    z = state.astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


class Splitmix64:
    """Stateful convenience wrapper: a seed plus a running counter."""

    def __init__(self, seed: int):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self.counter = np.uint64(0)

    def derive(self, stream: int) -> "Splitmix64":
        """Independent child stream; deterministic in (seed, stream)."""
        old_err = np.seterr(over="ignore")
        try:
            child = _mix(np.array([self.seed + GOLDEN * np.uint64(stream)], dtype=np.uint64))[0]
        finally:
            np.seterr(**old_err)
        return Splitmix64(int(child))

    def raw(self, n: int) -> np.ndarray:
        old_err = np.seterr(over="ignore")
        try:
            counters = self.counter + np.arange(n, dtype=np.uint64)
            self.counter += np.uint64(n)
            return _mix(self.seed + GOLDEN * (counters + np.uint64(1)))
        finally:
            np.seterr(**old_err)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _U53
        return low + u * (high - low)

    def normal(self, n: int, sigma: float = 1.0) -> np.ndarray:
        # Box-Muller; draw pairs, keep the first n values.
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        u1 = np.maximum(u1, _U53)  # avoid log(0)
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(2.0 * np.pi * u2)
        out[1::2] = r * np.sin(2.0 * np.pi * u2)
        return sigma * out[:n]

    def integers(self, n: int, low: int, high: int) -> np.ndarray:
        """Uniform ints in [low, high); modulo reduction (span << 2^64)."""
        span = np.uint64(high - low)
        return (low + (self.raw(n) % span).astype(np.int64)).astype(np.int64)

    def shuffle_index(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) (sort of random keys)."""
        keys = self.raw(n)
        return np.argsort(keys, kind="stable")
