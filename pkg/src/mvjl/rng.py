"""Counter-based random streams.

Every random number is a pure function of ``(key, purpose, step, index, draw)``,
where the key is derived from a master seed and an optional spawn path.  The
value for particle ``i`` at step ``k`` therefore never depends on how many
particles are simulated, in which order, or on how work is split across
threads.

The mixing function is the SplitMix64 finalizer applied once per counter
component.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

# stream purposes
NORMAL = 1
POISSON = 2
MARK = 3
ACCEPT = 4
INITIAL = 5
MOLLIFY = 6
QUADRATURE = 7
SAMPLE = 8


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _absorb(h: np.ndarray, value) -> np.ndarray:
    v = np.asarray(value).astype(np.uint64)
    return _mix(h + _GOLDEN * (v + np.uint64(1)))


class RandomStream:
    """Deterministic, splittable source of uniforms and normals.

    Parameters
    ----------
    seed : int
        Master seed (any non-negative integer).
    path : tuple of int
        Spawn path; ``RandomStream(s).spawn(a, b)`` equals ``RandomStream(s, (a, b))``.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._key = ss.generate_state(1, np.uint64)[0]

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, path={self.path})"

    def __eq__(self, other) -> bool:
        return isinstance(other, RandomStream) and (self.seed, self.path) == (other.seed, other.path)

    def __hash__(self) -> int:
        return hash((self.seed, self.path))

    def spawn(self, *labels: int) -> RandomStream:
        return RandomStream(self.seed, self.path + tuple(labels))

    def bits(self, purpose: int, step: int, index, draw=0) -> np.ndarray:
        """Raw 64-bit words, broadcast over ``index`` and ``draw``."""
        index = np.asarray(index)
        draw = np.asarray(draw)
        with np.errstate(over="ignore"):
            h = _absorb(self._key, purpose)
            h = _absorb(h, step)
            h = _absorb(h, index)
            h = _absorb(h, draw)
        return np.broadcast_to(h, np.broadcast_shapes(index.shape, draw.shape))

    def uniform(self, purpose: int, step: int, index, draw=0) -> np.ndarray:
        """Uniforms on the open interval (0, 1)."""
        b = self.bits(purpose, step, index, draw)
        return ((b >> _S11).astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, purpose: int, step: int, index, draw=0) -> np.ndarray:
        """Standard normals by inversion (one uniform per normal)."""
        return ndtri(self.uniform(purpose, step, index, draw))

    def poisson(self, purpose: int, step: int, index, rate: float) -> np.ndarray:
        """Poisson counts with mean ``rate`` by CDF inversion of one uniform.

        Only meant for the small per-step means of a time-stepping scheme.
        """
        if rate > 50.0:
            raise ValueError(f"poisson mean {rate} too large for inversion")
        u = np.asarray(self.uniform(purpose, step, index))
        counts = np.zeros(u.shape, dtype=np.int64)
        if rate <= 0.0:
            return counts
        p = np.full(u.shape, np.exp(-rate))
        cdf = p.copy()
        active = u > cdf
        k = 0
        while active.any() and k < 10_000:
            k += 1
            counts[active] += 1
            p = p * (rate / k)
            cdf = cdf + p
            active &= (u > cdf) & (p > 0.0)
        return counts
