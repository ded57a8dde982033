"""Seeded splitmix64 generator.

Every random draw in the package (sampler noise, weight init, power
iteration starts) goes through :class:`Rng` so that a run is fully determined
by ``(seed, stream)``.

Generator definition::

    GAMMA = 0x9E3779B97F4A7C15
    mix(z):  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
             z = (z ^ (z >> 27)) * 0x94D049BB133111EB
             return z ^ (z >> 31)                      (all mod 2**64)
    init:    state = mix(seed ^ mix((stream + 1) * GAMMA))
    next:    state += GAMMA; return mix(state)
    uniform: (next >> 11) * 2**-53                     in [0, 1)
    normal:  u1, u2 = uniform(), uniform()
             sqrt(-2 ln(1 - u1)) * cos(2 pi u2)

Since the state advances by a constant, a block of ``n`` outputs is computed
in one vectorised shot.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _mix_int(z: int) -> int:
    return int(_mix(np.array([z & MASK64], dtype=np.uint64))[0])


class Rng:
    """Deterministic stream of uniforms and standard normals."""

    def __init__(self, seed: int = 0, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        self._state = _mix_int(self.seed ^ _mix_int((self.stream + 1) * GAMMA))

    def _raw(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GAMMA)
        states = steps + np.uint64(self._state)
        self._state = (self._state + n * GAMMA) & MASK64
        return _mix(states)

    def uniforms(self, n: int) -> np.ndarray:
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def gaussians(self, n: int) -> np.ndarray:
        u = self.uniforms(2 * n)
        u1, u2 = u[0::2], u[1::2]
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)

    def next_uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def next_gaussian(self) -> float:
        return float(self.gaussians(1)[0])

    def fill_gaussian(self, shape) -> np.ndarray:
        """Standard normal tensor filled in row-major order."""
        shape = tuple(np.atleast_1d(shape).astype(int)) if not isinstance(shape, tuple) else shape
        n = int(np.prod(shape)) if shape else 1
        return self.gaussians(n).reshape(shape)

    def spawn(self, stream: int) -> "Rng":
        """Independent generator on another stream, same seed."""
        return Rng(self.seed, stream)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"
