"""Benchmark objectives and sample-based checks of the objective assumptions.

The checks are falsifiers: a pass means no violation was found on the
sampled points, not that the property holds on all of R^d.
"""

from __future__ import annotations

import math
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import rng

RASTRIGIN_A = 10.0
ACKLEY_A, ACKLEY_B, ACKLEY_C = 20.0, 0.2, 2 * math.pi


@dataclass(frozen=True)
class Objective:
    """A black-box energy ``E: R^d -> R``.

    ``func`` maps an ``(n, d)`` array to ``n`` energies. ``x_star`` and
    ``e_min`` are the known minimizer and minimal value, when available.
    ``metadata`` holds declared assumption constants (``L_E``, ``c_u``,
    ``c_l``, ``c_l_radius``, ``eta``, ``nu``, ``R0``, ``E_inf``, ``E_sup``).
    """

    func: Callable[[np.ndarray], np.ndarray]
    dim: int
    x_star: Optional[np.ndarray] = None
    e_min: Optional[float] = None
    name: str = "custom"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.x_star is not None:
            xs = np.asarray(self.x_star, dtype=float).reshape(-1)
            if xs.shape[0] != self.dim:
                raise ValueError("x_star dimension does not match dim")
            object.__setattr__(self, "x_star", xs)
            if self.e_min is not None:
                val = float(self(xs[None, :])[0])
                if abs(val - self.e_min) > 1e-12:
                    raise ValueError(f"E(x_star) = {val} differs from e_min = {self.e_min}")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.asarray(self.func(x[None, :]), dtype=float)[0]
        return np.asarray(self.func(x), dtype=float).reshape(-1)


def _sphere(center):
    c = np.asarray(center, dtype=float)
    return lambda x: 0.5 * np.sum((x - c) ** 2, axis=1)


def _rastrigin(x):
    return RASTRIGIN_A * x.shape[1] + np.sum(x**2 - RASTRIGIN_A * np.cos(2 * np.pi * x), axis=1)


def _ackley(x):
    d = x.shape[1]
    r = np.sqrt(np.sum(x**2, axis=1) / d)
    c = np.sum(np.cos(ACKLEY_C * x), axis=1) / d
    return -ACKLEY_A * np.exp(-ACKLEY_B * r) - np.exp(c) + ACKLEY_A + math.e


BUILTINS = ("sphere", "rastrigin", "ackley", "shifted_sphere")


def builtin(name: str, dim: int, offset: Optional[Sequence[float]] = None) -> Objective:
    """Named benchmark with exact ``x_star`` and ``e_min``.

    ``sphere`` is ``0.5 |x - x*|^2`` with ``x* = 0`` (or ``offset`` for
    ``shifted_sphere``). Rastrigin uses ``A = 10``; Ackley uses
    ``a = 20, b = 0.2, c = 2 pi``.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    zero = np.zeros(dim)
    if name == "sphere" or name == "shifted_sphere":
        center = zero if offset is None else np.asarray(offset, dtype=float)
        if name == "sphere" and offset is not None and np.any(center != 0):
            name = "shifted_sphere"
        if center.shape != (dim,):
            raise ValueError("offset must have length dim")
        meta = {"L_E": 0.5, "c_u": 0.5, "c_l": 0.5, "nu": 0.5, "eta": 1 / math.sqrt(2)}
        return Objective(_sphere(center), dim, center, 0.0, name, meta)
    if name == "rastrigin":
        return Objective(_rastrigin, dim, zero, 0.0, name, {})
    if name == "ackley":
        return Objective(_ackley, dim, zero, 0.0, name, {"E_sup": ACKLEY_A + math.e})
    raise ValueError(f"unknown objective {name!r}; choose from {BUILTINS}")


class ExternalObjective:
    """Objective evaluated by a child process.

    Line protocol: one point per line as whitespace-separated decimals on
    stdin; the process answers one decimal energy per line on stdout.
    """

    def __init__(self, command, dim: int):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.dim = dim
        self._proc = None
        self._lock = threading.Lock()

    def _start(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
            )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape[0])
        with self._lock:
            self._start()
            for i, row in enumerate(x):
                self._proc.stdin.write(" ".join(f"{v:.17g}" for v in row) + "\n")
                self._proc.stdin.flush()
                line = self._proc.stdout.readline()
                if not line:
                    raise RuntimeError("external objective closed its output")
                out[i] = float(line)
        return out

    def close(self):
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)
            self._proc = None

    def objective(self, **kw) -> Objective:
        return Objective(self, self.dim, name="external", **kw)


# --- sampling helpers -------------------------------------------------------

def _directions(key: int, n: int, d: int, stream: int) -> np.ndarray:
    z = rng.standard_normals(key, stream, np.arange(n)[:, None], np.arange(d)[None, :])
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _ball(key: int, n: int, d: int, radius: float, stream: int = 0) -> np.ndarray:
    u = rng.uniforms(key, stream + 1, np.arange(n), 0)
    return _directions(key, n, d, stream) * (radius * u ** (1 / d))[:, None]


def _shell(key, n, d, r_in, r_out, stream=0, norm="euclidean"):
    u = rng.uniforms(key, stream + 1, np.arange(n), 0)
    r = r_in + (r_out - r_in) * u
    if norm == "euclidean":
        dirs = _directions(key, n, d, stream)
    else:
        dirs = _cube_surface(key, n, d, stream)
    return dirs * r[:, None]


def _cube_surface(key, n, d, stream):
    c = 2 * rng.uniforms(key, stream + 2, np.arange(n)[:, None], np.arange(d)[None, :]) - 1
    face = (rng.uniforms(key, stream + 3, np.arange(n), 0) * d).astype(int)
    sign = np.where(rng.uniforms(key, stream + 4, np.arange(n), 0) < 0.5, -1.0, 1.0)
    c[np.arange(n), face] = sign
    return c


def _eval(obj: Objective, x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        return obj(x)


# --- A2: local Lipschitz with linear growth ---------------------------------

@dataclass(frozen=True)
class LipschitzCheck:
    passed: bool
    fitted_L: float
    fitted_L_half: float


def _lipschitz_fit(obj, key, n, radius, stream):
    d = obj.dim
    x = _ball(key, n, d, radius, stream)
    # a quarter of the base points sit at log-uniform radii to resolve kinks near 0
    q = n // 4
    rad = radius * 10.0 ** (-3 * rng.uniforms(key, stream + 40, np.arange(q), 0))
    x[:q] = _directions(key, q, d, stream + 50) * rad[:, None]
    y = _ball(key, n, d, radius, stream + 10)
    # half of the pairs are close: length scales from radius down to 1e-3 radius
    h = n // 2
    scale = radius * 10.0 ** (-3 * rng.uniforms(key, stream + 20, np.arange(h), 0))
    y[:h] = x[:h] + _directions(key, h, d, stream + 30) * scale[:, None]
    norm_y = np.linalg.norm(y, axis=1, keepdims=True)
    y = np.where(norm_y > radius, y * (radius / np.maximum(norm_y, 1e-300)), y)
    ex, ey = _eval(obj, x), _eval(obj, y)
    if not (np.all(np.isfinite(ex)) and np.all(np.isfinite(ey))):
        raise ValueError("objective returned a non-finite value during the Lipschitz check")
    dist = np.linalg.norm(x - y, axis=1)
    ok = dist > 0
    growth = 1 + np.linalg.norm(x, axis=1) + np.linalg.norm(y, axis=1)
    return float(np.max(np.abs(ex - ey)[ok] / (growth[ok] * dist[ok])))


def check_local_lipschitz(obj: Objective, radius: float, samples: int = 4000, seed: int = 0) -> LipschitzCheck:
    """Fit ``L`` in ``|E(x)-E(y)| <= L (1+|x|+|y|) |x-y|`` on a ball.

    The fit on ``2 * samples`` pairs in the ball of ``radius`` is compared
    with the fit on ``samples`` pairs in the ball of ``radius / 2``; the
    check passes when the fit is finite and grows by less than a factor 2.
    """
    if samples < 2:
        raise ValueError("need at least 2 samples")
    key = rng.derive_key(seed, 0xA2)
    small = _lipschitz_fit(obj, key, samples, radius / 2, 0)
    big = _lipschitz_fit(obj, key, 2 * samples, radius, 100)
    stable = big <= 2 * small if small > 0 else big == 0 or big < 1e-12
    return LipschitzCheck(bool(math.isfinite(big) and stable), big, small)


# --- A3: quadratic upper bound; bounded or quadratically growing farfield ----

@dataclass(frozen=True)
class GrowthCheck:
    upper_ok: bool
    lower_ok: bool
    bounded: bool
    quadratic: bool
    c_u: float
    c_l: float
    c_l_radius: float

    @property
    def fitted(self):
        return (self.c_u, self.c_l)

    @property
    def passed(self) -> bool:
        return self.upper_ok and self.lower_ok


def check_growth(obj: Objective, radius: float, samples: int = 4000, seed: int = 0) -> GrowthCheck:
    """Fit the growth constants of the objective about its minimal value.

    ``c_u`` is the largest ``(E - e_min) / (1 + |x|^2)`` in the ball of
    ``radius``; it must stay finite and not double on the ball of
    ``16 * radius``. The farfield is probed on the shells ``[r/2, r]``,
    ``[2r, 4r]`` and ``[8r, 16r]``. It counts as bounded when the largest
    excess grows like ``r^p`` with ``p < 1/4`` between the two outer shells,
    and as quadratic when ``c_l``, the smallest ``(E - e_min) / |x|^2`` on
    the inner shell, is positive and at most halves on the outermost one.
    """
    if obj.e_min is None:
        raise ValueError("e_min must be declared to check growth")
    key = rng.derive_key(seed, 0xA3)
    d = obj.dim

    def upper(r, stream):
        x = _ball(key, samples, d, r, stream)
        excess = _eval(obj, x) - obj.e_min
        return float(np.max(excess / (1 + np.sum(x**2, axis=1))))

    def shell(r_in, r_out, stream):
        x = _shell(key, samples, d, r_in, r_out, stream)
        excess = _eval(obj, x) - obj.e_min
        return excess, np.sum(x**2, axis=1)

    c_u = upper(radius, 0)
    c_u_far = upper(16 * radius, 10)
    upper_ok = math.isfinite(c_u) and math.isfinite(c_u_far) and c_u_far <= 2 * c_u

    shells = [shell(a * radius, b * radius, 20 + 10 * j) for j, (a, b) in enumerate([(0.5, 1), (2, 4), (8, 16)])]
    finite = all(np.all(np.isfinite(ex)) for ex, _ in shells)
    bounded = quadratic = False
    c_l = float(np.min(shells[0][0] / shells[0][1]))
    if finite:
        sup_mid, sup_out = float(np.max(shells[1][0])), float(np.max(shells[2][0]))
        bounded = sup_out <= sup_mid or math.log(sup_out / sup_mid) / math.log(4) < 0.25
        c_l_out = float(np.min(shells[2][0] / shells[2][1]))
        quadratic = c_l > 0 and c_l_out >= c_l / 2
    return GrowthCheck(
        upper_ok=bool(upper_ok),
        lower_ok=bool(bounded or quadratic),
        bounded=bool(bounded),
        quadratic=bool(quadratic),
        c_u=c_u,
        c_l=c_l,
        c_l_radius=radius / 2,
    )


# --- inverse continuity -----------------------------------------------------

NU_GRID = (0.25, 0.5, 1.0, 2.0)


@dataclass(frozen=True)
class IcpGrid:
    """Sampling for :func:`check_icp`.

    Inner points have distances log-uniform in ``[R0 * inner_span, R0]``;
    farfield points fill the shell ``[R0, far_radius]`` and the best of them
    are polished by Nelder-Mead to expose hidden near-minimizers.
    """

    n_inner: int = 4000
    n_far: int = 4000
    inner_span: float = 1e-4
    far_radius: Optional[float] = None
    n_polish: int = 8
    gap_tol: float = 1e-6
    seed: int = 0
    nu_grid: tuple = NU_GRID


@dataclass(frozen=True)
class IcpCheck:
    passed: bool
    eta: float
    nu: float
    e_inf: float

    @property
    def fitted(self):
        return (self.eta, self.nu, self.e_inf)


def _dist(x, x_star, norm):
    diff = x - x_star
    if norm == "euclidean":
        return np.linalg.norm(diff, axis=-1)
    return np.max(np.abs(diff), axis=-1)


def check_icp(
    obj: Objective, norm: str = "euclidean", r0: Optional[float] = None, grid: IcpGrid = IcpGrid()
) -> IcpCheck:
    """Fit ``|x - x*| <= (1/eta) (E(x) - e_min)^nu`` near x* and the farfield gap.

    ``norm`` is ``"euclidean"`` (isotropic noise) or ``"max"`` (anisotropic).
    For each ``nu`` on the grid, ``eta`` is the smallest ratio
    ``(E - e_min)^nu / dist`` over the inner samples. A ``nu`` is feasible
    when that ratio does not keep shrinking toward x*: its minimum over the
    innermost decade of distances must be at least half its minimum over
    the outermost decade. The largest feasible ``nu`` is reported.
    """
    if obj.x_star is None or obj.e_min is None:
        raise ValueError("x_star and e_min must be declared to check ICP")
    if norm not in ("euclidean", "max"):
        raise ValueError(f"unknown norm {norm!r}")
    r0 = obj.metadata.get("R0") if r0 is None else r0
    if r0 is None or not r0 > 0:
        raise ValueError("R0 must be supplied or declared in metadata")
    key = rng.derive_key(grid.seed, 0x1C)
    d, xs, e_min = obj.dim, obj.x_star, obj.e_min

    if norm == "euclidean":
        dirs = _directions(key, grid.n_inner, d, 0)
    else:
        dirs = _cube_surface(key, grid.n_inner, d, 0)
    u = rng.uniforms(key, 5, np.arange(grid.n_inner), 0)
    r = r0 * grid.inner_span ** (1 - u)
    x_in = xs + dirs * r[:, None]
    dist = _dist(x_in, xs, norm)
    excess = np.maximum(_eval(obj, x_in) - e_min, 0.0)

    decade = np.log10(grid.inner_span)
    inner = dist <= r0 * 10 ** (decade + 1)
    outer = dist >= r0 / 10
    best = None
    for nu in sorted(grid.nu_grid):
        ratio = excess**nu / dist
        eta = float(np.min(ratio))
        if eta > 0 and np.min(ratio[inner]) >= 0.5 * np.min(ratio[outer]):
            best = (eta, nu)
    eta, nu = best if best is not None else (0.0, float("nan"))

    far = grid.far_radius if grid.far_radius is not None else 10 * r0
    x_far = xs + _shell(key, grid.n_far, d, r0, far, 40, norm)
    x_far = x_far[_dist(x_far, xs, norm) > r0]
    e_far = _eval(obj, x_far) - e_min
    e_inf = float(np.min(e_far)) if e_far.size else float("inf")
    for idx in np.argsort(e_far)[: grid.n_polish]:
        res = minimize(
            lambda z: float(obj(z)), x_far[idx], method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000 * d},
        )
        if _dist(res.x, xs, norm) > r0 and np.isfinite(res.fun):
            e_inf = min(e_inf, float(res.fun) - e_min)
    passed = best is not None and e_inf > grid.gap_tol
    return IcpCheck(bool(passed), eta, nu, e_inf)
