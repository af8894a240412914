"""Domain types shared across the package."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng


class DiffusionKind(str, enum.Enum):
    """Noise scaling: ``|v| I_d`` (isotropic) or ``diag(v)`` (anisotropic)."""

    ISOTROPIC = "isotropic"
    ANISOTROPIC = "anisotropic"


def kappa(kind: DiffusionKind, dim: int) -> int:
    """Dimension factor in the decay rate ``2 lam - kappa sigma^2``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return dim if DiffusionKind(kind) is DiffusionKind.ISOTROPIC else 1


@dataclass(frozen=True)
class InitDistribution:
    """Initial law, as a sampler.

    ``kind`` is ``"uniform_box"`` (params ``lower``, ``upper``) or
    ``"gaussian"`` (params ``mean``, ``cov_diag``). Draws are i.i.d. and
    particle ``i``'s draw depends only on ``(seed, i)``.
    """

    kind: str
    a: tuple  # lower or mean
    b: tuple  # upper or cov_diag

    def __post_init__(self):
        a = tuple(float(v) for v in self.a)
        b = tuple(float(v) for v in self.b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if len(a) != len(b) or not a:
            raise ValueError("init parameter vectors must have equal, positive length")
        if self.kind == "uniform_box":
            if not all(lo < hi for lo, hi in zip(a, b)):
                raise ValueError("uniform_box requires lower < upper componentwise")
        elif self.kind == "gaussian":
            if not all(v > 0 for v in b):
                raise ValueError("gaussian requires a positive cov_diag")
        else:
            raise ValueError(f"unknown init kind {self.kind!r}")

    @classmethod
    def uniform_box(cls, lower: Sequence[float], upper: Sequence[float]) -> "InitDistribution":
        return cls("uniform_box", tuple(lower), tuple(upper))

    @classmethod
    def gaussian(cls, mean: Sequence[float], cov_diag: Sequence[float]) -> "InitDistribution":
        return cls("gaussian", tuple(mean), tuple(cov_diag))

    @property
    def dim(self) -> int:
        return len(self.a)

    def sample(self, n: int, seed: int) -> np.ndarray:
        key = rng.derive_key(seed, rng.STREAM_INIT)
        parts = np.arange(n)[:, None]
        coords = np.arange(self.dim)[None, :]
        a, b = np.array(self.a), np.array(self.b)
        if self.kind == "uniform_box":
            return a + (b - a) * rng.uniforms(key, 0, parts, coords)
        return a + np.sqrt(b) * rng.standard_normals(key, 0, parts, coords)

    def second_moment_about(self, x: np.ndarray) -> float:
        """Exact ``E|X - x|^2`` under this law."""
        a, b, x = np.array(self.a), np.array(self.b), np.asarray(x, dtype=float)
        if self.kind == "uniform_box":
            mean, var = (a + b) / 2, (b - a) ** 2 / 12
        else:
            mean, var = a, b
        return float(np.sum(var + (mean - x) ** 2))

    def contains(self, x) -> bool:
        if self.kind == "gaussian":
            return True
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.a) and np.all(x <= self.b))

    def to_dict(self) -> dict:
        if self.kind == "uniform_box":
            return {"kind": self.kind, "lower": list(self.a), "upper": list(self.b)}
        return {"kind": self.kind, "mean": list(self.a), "cov_diag": list(self.b)}

    @classmethod
    def from_dict(cls, d: dict) -> "InitDistribution":
        d = dict(d)
        kind = d.pop("kind")
        if kind == "uniform_box":
            a, b = d.pop("lower"), d.pop("upper")
        elif kind == "gaussian":
            a, b = d.pop("mean"), d.pop("cov_diag")
        else:
            raise ValueError(f"unknown init kind {kind!r}")
        if d:
            raise ValueError(f"unknown init keys: {sorted(d)}")
        return cls(kind, tuple(a), tuple(b))


def check_support(init: InitDistribution, x_star) -> bool:
    """Warn when the initial law's support misses the minimizer."""
    ok = init.contains(x_star)
    if not ok:
        warnings.warn("initial distribution support does not contain x_star", stacklevel=2)
    return ok


@dataclass(frozen=True)
class CboConfig:
    dim: int
    n_particles: int
    lam: float
    sigma: float
    alpha: float
    dt: float
    n_steps: int
    diffusion: DiffusionKind = DiffusionKind.ISOTROPIC
    seed: int = 0
    init: Optional[InitDistribution] = None
    moment_cap: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "diffusion", DiffusionKind(self.diffusion))
        if self.dim < 1 or self.n_particles < 1:
            raise ValueError("dim and n_particles must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be nonnegative")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.dt <= 1:
            raise ValueError(f"dt must satisfy 0 < dt <= 1 (got {self.dt})")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.init is None:
            object.__setattr__(
                self, "init", InitDistribution.uniform_box([-1.0] * self.dim, [1.0] * self.dim)
            )
        if self.init.dim != self.dim:
            raise ValueError("init dimension does not match dim")

    @property
    def kappa(self) -> int:
        return kappa(self.diffusion, self.dim)

    @property
    def decay_rate(self) -> float:
        return 2 * self.lam - self.kappa * self.sigma**2

    @property
    def well_posed(self) -> bool:
        """Whether ``2 lam - kappa sigma^2 > 0``."""
        return self.decay_rate > 0

    def replace(self, **changes) -> "CboConfig":
        from dataclasses import replace

        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = {
            "dim": self.dim,
            "n_particles": self.n_particles,
            "lambda": self.lam,
            "sigma": self.sigma,
            "alpha": self.alpha,
            "dt": self.dt,
            "n_steps": self.n_steps,
            "diffusion": self.diffusion.value,
            "seed": self.seed,
            "init": self.init.to_dict(),
        }
        if self.moment_cap is not None:
            d["moment_cap"] = self.moment_cap
        return d


@dataclass(frozen=True)
class Ensemble:
    """Particle positions ``(N, d)`` with cached energies at step ``time_index``."""

    positions: np.ndarray
    energies: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        x = np.array(self.positions, dtype=float)
        e = np.array(self.energies, dtype=float).reshape(-1)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("positions must be a nonempty (N, d) array")
        if e.shape != (x.shape[0],):
            raise ValueError("energies must have one entry per particle")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite particle position")
        if not np.all(np.isfinite(e)):
            bad = int(np.flatnonzero(~np.isfinite(e))[0])
            raise ValueError(f"non-finite energy at particle {bad}")
        x.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "energies", e)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


def variance_functional(ens: Ensemble, x_star) -> float:
    """``(1 / 2N) sum_i |x_i - x*|^2`` for the empirical measure of ``ens``."""
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    if x_star.shape[0] != ens.dim:
        raise ValueError(f"x_star has dimension {x_star.shape[0]}, ensemble has {ens.dim}")
    sq = np.sum((ens.positions - x_star) ** 2, axis=1)
    return 0.5 * math.fsum(sq) / ens.n


@dataclass
class RunTrace:
    """Per-step statistics of one run; row ``k`` describes the ensemble at step ``k``.

    ``variance_functional`` and ``mean_error`` (the squared distance of the
    particle average to x*) are ``None`` unless x* was supplied.
    """

    consensus_points: np.ndarray
    second_moment: np.ndarray
    max_norm: np.ndarray
    max_weight: np.ndarray
    evaluations: np.ndarray
    final: Ensemble
    variance_functional: Optional[np.ndarray] = None
    mean_error: Optional[np.ndarray] = None
    particle_error: Optional[np.ndarray] = None
    recorded: dict = field(default_factory=dict)
    moment_cap_breached: bool = False

    @property
    def n_rows(self) -> int:
        return self.consensus_points.shape[0]

    def columns(self) -> dict:
        cols = {"step": np.arange(self.n_rows)}
        for j in range(self.consensus_points.shape[1]):
            cols[f"consensus_{j}"] = self.consensus_points[:, j]
        cols["second_moment"] = self.second_moment
        cols["max_norm"] = self.max_norm
        cols["max_weight"] = self.max_weight
        cols["evaluations"] = self.evaluations
        if self.variance_functional is not None:
            cols["variance_functional"] = self.variance_functional
            cols["mean_error"] = self.mean_error
            cols["particle_error"] = self.particle_error
        return cols
