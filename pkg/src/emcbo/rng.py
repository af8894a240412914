"""Counter-based Gaussian increments.

Every value is a pure function of ``(seed, stream, step, particle, coordinate)``:
a splitmix64-style hash of the address is mapped to a uniform on (0, 1) and
then through the normal quantile function. Nothing is drawn sequentially, so
results do not depend on access order or on how work is split across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

# stream tags; any distinct constants work
STREAM_NOISE = 0x4E4F495345
STREAM_INIT = 0x494E4954
STREAM_BRIDGE = 0x425249444745

_MAX_STEPS = 1 << 62


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _add(a, b):
    # wrapping uint64 arithmetic
    with np.errstate(over="ignore"):
        return a + b * _GOLDEN


def derive_key(seed: int, *tags: int) -> int:
    """Hash a seed and any number of integer tags into a 64-bit key."""
    z = np.array([int(seed) & _MASK64], dtype=np.uint64)
    z = _mix(_add(z, np.uint64(1)))
    for tag in tags:
        z = _mix(_add(z, np.uint64(int(tag) & _MASK64)))
    return int(z[0])


def uniforms(key: int, steps, particles, coords) -> np.ndarray:
    """Open-interval uniforms addressed by broadcasting index arrays.

    The three index arguments broadcast against each other the same way numpy
    arrays do; the result has the broadcast shape.
    """
    steps = np.asarray(steps, dtype=np.uint64)
    particles = np.asarray(particles, dtype=np.uint64)
    coords = np.asarray(coords, dtype=np.uint64)
    z = _mix(_add(np.uint64(key), steps))
    z = _mix(_add(z, particles))
    z = _mix(_add(z, coords))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def standard_normals(key: int, steps, particles, coords) -> np.ndarray:
    return ndtri(uniforms(key, steps, particles, coords))


@dataclass(frozen=True)
class NoiseTable:
    """Brownian increments for ``n_particles`` particles over ``n_steps`` steps.

    ``increment(i, k)`` is N(0, dt I_d). A table produced by :meth:`refine`
    samples the *same* Brownian paths on a grid ``factor`` times finer: the
    fine increments inside coarse step ``k`` sum to the coarse increment.

    Parameters
    ----------
    seed : int
        64-bit seed; the sole source of randomness.
    n_particles, n_steps, dim : int
        Table extent. Values for particle ``i`` do not depend on
        ``n_particles``, so tables of different sizes share their leading
        particles.
    dt : float
        Step size the increments are scaled to.
    """

    seed: int
    n_particles: int
    n_steps: int
    dim: int
    dt: float
    parent: Optional["NoiseTable"] = field(default=None, repr=False)
    factor: int = 1
    level: int = 0

    def __post_init__(self):
        if self.n_particles < 1 or self.n_steps < 0 or self.dim < 1:
            raise ValueError("table extent must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps > _MAX_STEPS:
            raise OverflowError("step index exceeds the addressable range")

    @property
    def key(self) -> int:
        return derive_key(self.seed, STREAM_NOISE, self.level)

    def _check(self, i: int, k: int):
        if not 0 <= i < self.n_particles:
            raise IndexError(f"particle index {i} out of range [0, {self.n_particles})")
        if not 0 <= k < self.n_steps:
            raise IndexError(f"step index {k} out of range [0, {self.n_steps})")

    def _own(self, k0: int, k1: int, n: int) -> np.ndarray:
        steps = np.arange(k0, k1, dtype=np.uint64)[:, None, None]
        parts = np.arange(n, dtype=np.uint64)[None, :, None]
        coords = np.arange(self.dim, dtype=np.uint64)[None, None, :]
        return np.sqrt(self.dt) * standard_normals(self.key, steps, parts, coords)

    def block(self, k0: int, k1: int, n: Optional[int] = None) -> np.ndarray:
        """Increments for steps ``k0 <= k < k1`` as a ``(k1 - k0, n, dim)`` array."""
        n = self.n_particles if n is None else n
        if not 0 < n <= self.n_particles:
            raise IndexError(f"particle count {n} out of range (0, {self.n_particles}]")
        if not 0 <= k0 <= k1 <= self.n_steps:
            raise IndexError(f"step range [{k0}, {k1}) out of range [0, {self.n_steps})")
        if k0 == k1:
            return np.empty((0, n, self.dim))
        if self.parent is None:
            return self._own(k0, k1, n)
        m = self.factor
        c0, c1 = k0 // m, -(-k1 // m)
        coarse = self.parent.block(c0, c1, n)
        z = self._own(c0 * m, c1 * m, n).reshape(c1 - c0, m, n, self.dim)
        # Brownian bridge: independent fine draws conditioned on their sum
        fine = z - z.mean(axis=1, keepdims=True) + coarse[:, None] / m
        fine = fine.reshape((c1 - c0) * m, n, self.dim)
        return fine[k0 - c0 * m : k1 - c0 * m]

    def increments(self, k: int, n: Optional[int] = None) -> np.ndarray:
        """All particles' increments at step ``k`` as an ``(n, dim)`` array."""
        return self.block(k, k + 1, n)[0]

    def increment(self, i: int, k: int) -> np.ndarray:
        self._check(i, k)
        return self.block(k, k + 1, i + 1)[0, i]

    def refine(self, m: int) -> "NoiseTable":
        """The same Brownian paths on a grid with step ``dt / m``."""
        if m < 1:
            raise ValueError("refinement factor must be a positive integer")
        if m == 1:
            return self
        if self.n_steps * m > _MAX_STEPS:
            raise OverflowError("refined step index exceeds the addressable range")
        return NoiseTable(
            seed=self.seed,
            n_particles=self.n_particles,
            n_steps=self.n_steps * m,
            dim=self.dim,
            dt=self.dt / m,
            parent=self,
            factor=m,
            level=self.level + 1,
        )

    def with_size(self, n_particles: int, n_steps: int) -> "NoiseTable":
        """Same seed and addressing with a different extent (root tables only)."""
        if self.parent is not None:
            raise ValueError("resize the root table, then refine")
        return NoiseTable(self.seed, n_particles, n_steps, self.dim, self.dt)


def bridge_value(delta_w: np.ndarray, dt: float, s: float, key: int, draw: int = 0) -> np.ndarray:
    """Sample ``W_s - W_0`` given ``W_dt - W_0 = delta_w`` for ``0 <= s <= dt``.

    The conditional law is N((s/dt) delta_w, s (dt - s) / dt). ``draw`` selects
    an independent bridge sample.
    """
    delta_w = np.asarray(delta_w, dtype=float)
    n, d = delta_w.shape
    z = standard_normals(key, np.uint64(draw), np.arange(n)[:, None], np.arange(d)[None, :])
    return (s / dt) * delta_w + np.sqrt(s * (dt - s) / dt) * z
