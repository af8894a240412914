"""Convergence experiments and the hyperparameter planner.

Every experiment is deterministic given its configuration: replication ``r``
uses a seed derived from ``(cfg.seed, r)`` (replication 0 uses ``cfg.seed``
itself), and replications are aggregated in order with exactly rounded sums,
so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from .core import CboConfig, DiffusionKind, kappa
from .dynamics import em_step, initial_ensemble, interpolate, run
from .consensus import consensus_point
from .objectives import Objective

DEFAULT_THETA = 1 / 3
DEFAULT_Q = 6.0


class NotWellPosed(ValueError):
    """Raised when ``2 lam - kappa sigma^2 <= 0``."""


def seed_for(base: int, r: int) -> int:
    return base if r == 0 else rng.derive_key(base, 0x5EED, r)


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def fmean(values, axis=0) -> np.ndarray:
    """Exactly rounded mean along ``axis``."""
    a = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    flat = a.reshape(-1, a.shape[-1])
    out = np.array([math.fsum(row) for row in flat]) / a.shape[-1]
    return out.reshape(a.shape[:-1])


# --- planner ---------------------------------------------------------------

@dataclass(frozen=True)
class PlannerInput:
    eps_total: float
    lam: float
    sigma: float
    alpha: float
    diffusion: DiffusionKind
    dim: int
    v_rho0: float
    theta: float = DEFAULT_THETA
    q: float = DEFAULT_Q
    c_na: float = 1.0
    c_mfa: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "diffusion", DiffusionKind(self.diffusion))
        if not self.eps_total > 0:
            raise ValueError("eps_total must be positive")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if not self.q >= 4:
            raise ValueError("moment order q must be >= 4")
        if not (self.v_rho0 > 0 and self.c_na > 0 and self.c_mfa > 0):
            raise ValueError("v_rho0, c_na and c_mfa must be positive")
        if self.rate <= 0:
            raise NotWellPosed(f"2*lambda - kappa*sigma^2 = {self.rate:.6g} must be positive")

    @property
    def rate(self) -> float:
        return 2 * self.lam - kappa(self.diffusion, self.dim) * self.sigma**2

    @property
    def n_exponent(self) -> float:
        return min(1.0, (self.q - 2) / 4)


@dataclass(frozen=True)
class PlannerOutput:
    T: float
    N: int
    dt: float
    K: int
    clamped: bool = False


def plan(inp: PlannerInput) -> PlannerOutput:
    """Horizon, particle count, step size and iteration count for a target accuracy.

    Each of the three error contributions (discretization, finite N, decay
    of the variance functional) is budgeted ``eps_total / 3``.
    """
    log_term = math.log(12 * inp.v_rho0 / inp.eps_total)
    clamped = log_term <= 0
    if clamped:
        warnings.warn("eps_total >= 12 V(rho0): the decay term already meets the target", stacklevel=2)
        T = 1.0
    else:
        T = log_term / ((1 - inp.theta) * inp.rate) + 1
    N = max(1, math.ceil((3 * inp.c_mfa / inp.eps_total) ** max(1.0, 4 / (inp.q - 2))))
    dt = min(1.0, inp.eps_total / (3 * inp.c_na))
    return PlannerOutput(T=T, N=N, dt=dt, K=math.ceil(T / dt), clamped=clamped)


# --- slope fitting -----------------------------------------------------------

@dataclass
class RateReport:
    """Log-log fit of mean squared error against step size or particle count.

    ``per_seed`` has one row per replication; ``errors`` is its column mean.
    ``fit_mask`` marks the points used in the fit.
    """

    x_values: np.ndarray
    errors: np.ndarray
    slope: float
    slope_ci: tuple
    n_seeds: int
    per_seed: np.ndarray
    fit_mask: np.ndarray
    label: str = "dt"
    extra: dict = field(default_factory=dict)


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def bootstrap_slope(x, per_seed, n_boot: int = 1000, seed: int = 0, level: float = 0.95):
    """Percentile interval of the log-log slope under resampling of replications."""
    per_seed = np.asarray(per_seed, dtype=float)
    n = per_seed.shape[0]
    gen = np.random.Generator(np.random.Philox(key=rng.derive_key(seed, 0xB007)))
    slopes = []
    for _ in range(n_boot):
        idx = gen.integers(0, n, n)
        y = per_seed[idx].mean(axis=0)
        if np.all(y > 0):
            slopes.append(loglog_slope(x, y))
    lo, hi = np.quantile(slopes, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def _report(x, per_seed, mask, label, seed, **extra) -> RateReport:
    x = np.asarray(x, dtype=float)
    per_seed = np.asarray(per_seed, dtype=float)
    errors = fmean(per_seed, axis=0)
    if np.sum(mask) < 2:
        raise ValueError("need at least 2 points to fit a slope")
    if not np.all(errors[mask] > 0):
        raise ValueError("errors must be strictly positive to fit a log-log slope")
    slope = loglog_slope(x[mask], errors[mask])
    ci = bootstrap_slope(x[mask], per_seed[:, mask], seed=seed)
    return RateReport(x, errors, slope, ci, per_seed.shape[0], per_seed, np.asarray(mask), label, dict(extra))


# --- decay of the variance functional ----------------------------------------

@dataclass
class DecayResult:
    fitted_rate: float
    predicted_rate: float
    theta_rate: float
    times: np.ndarray
    trace: np.ndarray
    window: tuple
    per_seed: np.ndarray


def plateau_window(v: np.ndarray, factor: float = 3.0) -> tuple:
    """Steps ``[0, end)`` before ``v`` first falls to ``factor`` times its minimum."""
    floor = float(np.min(v))
    below = np.flatnonzero(v <= factor * floor)
    end = int(below[0]) if below.size else len(v)
    return 0, max(end, 2)


def decay_experiment(
    cfg: CboConfig, obj: Objective, n_seeds: int, theta: float = DEFAULT_THETA, threads: int = 1
) -> DecayResult:
    """Fit the exponential decay rate of the seed-averaged variance functional."""
    if obj.x_star is None:
        raise ValueError("decay experiment needs a known minimizer")
    if not cfg.well_posed:
        raise NotWellPosed(f"2*lambda - kappa*sigma^2 = {cfg.decay_rate:.6g} must be positive")

    def one(r):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tr = run(cfg.replace(seed=seed_for(cfg.seed, r)), obj)
        if not np.all(np.isfinite(tr.variance_functional)):
            raise RuntimeError(f"replication {r} diverged")
        return tr.variance_functional

    per_seed = np.array(parallel_map(one, range(n_seeds), threads))
    v = fmean(per_seed, axis=0)
    t = cfg.dt * np.arange(len(v))
    k0, k1 = plateau_window(v)
    slope = float(np.polyfit(t[k0:k1], np.log(v[k0:k1]), 1)[0])
    return DecayResult(
        fitted_rate=-slope,
        predicted_rate=cfg.decay_rate,
        theta_rate=(1 - theta) * cfg.decay_rate,
        times=t,
        trace=v,
        window=(k0, k1),
        per_seed=per_seed,
    )


# --- strong rate in dt ---------------------------------------------------------

class CouplingError(RuntimeError):
    pass


def coupled_tables(cfg: CboConfig, levels: int, factor: int = 2) -> list:
    base = rng.NoiseTable(cfg.seed, cfg.n_particles, cfg.n_steps, cfg.dim, cfg.dt)
    tables = [base]
    for _ in range(levels - 1):
        tables.append(tables[-1].refine(factor))
    return tables


def check_coupling(tables: list, tol: float = 1e-14) -> float:
    """Largest gap between a coarse increment and the sum of its fine increments."""
    worst = 0.0
    for coarse, fine in zip(tables, tables[1:]):
        m = fine.factor
        c = coarse.block(0, coarse.n_steps)
        f = fine.block(0, fine.n_steps).reshape(coarse.n_steps, m, *c.shape[1:]).sum(axis=1)
        worst = max(worst, float(np.max(np.abs(f - c))))
    if worst > tol:
        raise CouplingError(f"refined increments miss the coarse increment by {worst:.3g}")
    return worst


def rate_dt_experiment(
    cfg: CboConfig,
    obj: Objective,
    levels: int,
    n_seeds: int,
    threads: int = 1,
    factor: int = 2,
    exact: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
    positions: Optional[np.ndarray] = None,
) -> RateReport:
    """Mean-square pathwise error against the finest of ``levels`` coupled step sizes.

    Level ``l`` uses step ``cfg.dt / factor**l`` on the same Brownian paths
    and initial positions. The error of a particle is the largest squared
    deviation from the finest level over the coarse time grid; it is averaged
    over particles and seeds. The slope is fitted on levels ``0 .. levels-3``
    (on levels 0 and 1 when ``levels == 3``, so two points remain).

    With ``exact(times, x0) -> (n_times, N, d)``, a closed-form solution
    replaces the finest level as reference and every level is compared
    against it.

    ``extra["slope_vs_gap"]`` refits the same errors against
    ``dt_l - dt_ref``, the step-size gap to the reference.
    """
    if levels < 3:
        raise ValueError("need at least 3 refinement levels")
    dts = np.array([cfg.dt / factor**lvl for lvl in range(levels)])
    worst = [0.0] * n_seeds

    def one(r):
        c = cfg.replace(seed=seed_for(cfg.seed, r))
        tables = coupled_tables(c, levels, factor)
        worst[r] = check_coupling(tables)
        x0 = c.init.sample(c.n_particles, c.seed) if positions is None else np.asarray(positions, float)
        paths = []
        for lvl, table in enumerate(tables):
            stride = factor**lvl
            cl = c.replace(dt=table.dt, n_steps=table.n_steps)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                tr = run(cl, obj, noise=table, positions=x0, record_every=stride)
            paths.append(np.stack([tr.recorded[k * stride] for k in range(c.n_steps + 1)]))
        if exact is None:
            ref, compared = paths[-1], paths[:-1]
        else:
            ref = exact(c.dt * np.arange(c.n_steps + 1), x0)
            compared = paths
        out = []
        for p in compared:
            sup = np.max(np.sum((p - ref) ** 2, axis=2), axis=0)
            out.append(math.fsum(sup) / len(sup))
        return out

    per_seed = np.array(parallel_map(one, range(n_seeds), threads))
    x = dts if exact is not None else dts[:-1]
    mask = np.zeros(len(x), dtype=bool)
    mask[: max(2, levels - 2)] = True
    rep = _report(x, per_seed, mask, "dt", cfg.seed, coupling_gap=max(worst),
                  reference_dt=0.0 if exact is not None else dts[-1])
    gap = x[mask] - rep.extra["reference_dt"]
    rep.extra["slope_vs_gap"] = loglog_slope(gap, rep.errors[mask])
    return rep


# --- rate in the particle count ------------------------------------------------

def _run_stats(cfg, obj, n_grid, stride):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tr = run(cfg, obj)
    idx = np.arange(n_grid) * stride
    return tr.consensus_points[idx], tr.variance_functional[idx]


def rate_n_experiment(
    cfg: CboConfig,
    obj: Objective,
    n_values: Sequence[int],
    n_seeds: int,
    n_ref: int,
    dt_ref: Optional[float] = None,
    threads: int = 1,
) -> RateReport:
    """Deviation of finite-N run statistics from a large-N reference run.

    The reference (``n_ref`` particles, step ``dt_ref``, seed ``cfg.seed``)
    stands in for the mean-field law. For each N, the error of a replication
    is the largest squared deviation of its consensus point plus the largest
    squared deviation of its variance functional, over the common time grid.
    """
    n_values = [int(v) for v in n_values]
    if len(n_values) < 3:
        raise ValueError("need at least 3 particle counts to fit a slope")
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ValueError("n_values must be strictly increasing")
    if obj.x_star is None:
        raise ValueError("rate_n experiment needs a known minimizer")
    dt_ref = cfg.dt if dt_ref is None else dt_ref
    ratio = cfg.dt / dt_ref
    stride_ref = int(round(ratio))
    if stride_ref < 1 or not math.isclose(stride_ref, ratio, rel_tol=1e-9):
        raise ValueError("cfg.dt must be an integer multiple of dt_ref")
    if n_ref < max(n_values):
        raise ValueError("n_ref must be at least the largest tested N")
    n_grid = cfg.n_steps + 1
    ref_cfg = cfg.replace(n_particles=n_ref, dt=dt_ref, n_steps=cfg.n_steps * stride_ref)
    ref_cons, ref_v = _run_stats(ref_cfg, obj, n_grid, stride_ref)

    jobs = [(r, n) for r in range(n_seeds) for n in n_values]

    def one(job):
        r, n = job
        c = cfg.replace(n_particles=n, seed=seed_for(cfg.seed, r))
        cons, v = _run_stats(c, obj, n_grid, 1)
        dc = float(np.max(np.sum((cons - ref_cons) ** 2, axis=1)))
        dv = float(np.max((v - ref_v) ** 2))
        return dc + dv

    flat = parallel_map(one, jobs, threads)
    per_seed = np.array(flat).reshape(n_seeds, len(n_values))
    mask = np.ones(len(n_values), dtype=bool)
    return _report(n_values, per_seed, mask, "N", cfg.seed, n_ref=n_ref, dt_ref=dt_ref)


# --- gap between the interpolant and its grid value ------------------------

def gap_experiment(
    cfg: CboConfig, obj: Objective, dts: Sequence[float], n_seeds: int, threads: int = 1
) -> RateReport:
    """``E|X(t) - X(kdt)|^2`` at mid-step for several step sizes.

    Each replication runs ``cfg.n_steps * cfg.dt`` time units at each step
    size and measures the squared gap at the midpoint of every step,
    averaged over steps and particles.
    """
    dts = np.asarray(sorted(dts, reverse=True), dtype=float)
    horizon = cfg.n_steps * cfg.dt

    def one(r):
        out = []
        for dt in dts:
            c = cfg.replace(dt=float(dt), n_steps=max(1, int(round(horizon / dt))), seed=seed_for(cfg.seed, r))
            noise = rng.NoiseTable(c.seed, c.n_particles, c.n_steps, c.dim, c.dt)
            ens = initial_ensemble(c, obj)
            acc = []
            for k in range(c.n_steps):
                cons = consensus_point(ens.positions, ens.energies, c.alpha)
                mid = interpolate(ens, cons, c, noise, (k + 0.5) * c.dt)
                acc.append(math.fsum(np.sum((mid - ens.positions) ** 2, axis=1)) / ens.n)
                ens = em_step(ens, c, noise, obj, consensus=cons).ensemble
            out.append(math.fsum(acc) / len(acc))
        return out

    per_seed = np.array(parallel_map(one, range(n_seeds), threads))
    return _report(dts, per_seed, np.ones(len(dts), dtype=bool), "dt", cfg.seed)


# --- error budget --------------------------------------------------------------

@dataclass
class BudgetReport:
    planned: PlannerOutput
    measured: np.ndarray  # mean_i |X_i - x*|^2 per seed
    measured_mean: np.ndarray  # |mean_i X_i - x*|^2 per seed
    term_dt: float
    term_n: float
    term_decay: float
    eps_total: float

    @property
    def bound(self) -> float:
        return self.term_dt + self.term_n + self.term_decay

    @property
    def fraction_within(self) -> float:
        return float(np.mean(self.measured <= self.eps_total))


def budget_terms(inp: PlannerInput, planned: PlannerOutput) -> tuple:
    t_dt = inp.c_na * planned.dt
    t_n = inp.c_mfa * planned.N ** (-inp.n_exponent)
    t_decay = 4 * inp.v_rho0 * math.exp(-(1 - inp.theta) * inp.rate * planned.K * planned.dt)
    return t_dt, t_n, t_decay


def error_budget(
    cfg: CboConfig,
    obj: Objective,
    inp: PlannerInput,
    n_seeds: int = 20,
    planned: Optional[PlannerOutput] = None,
    threads: int = 1,
) -> BudgetReport:
    """Run at the planned ``(N, dt, K)`` and set the measured error beside the bound terms."""
    if obj.x_star is None:
        raise ValueError("error budget needs a known minimizer")
    planned = plan(inp) if planned is None else planned
    run_cfg = cfg.replace(
        n_particles=planned.N, dt=planned.dt, n_steps=planned.K,
        lam=inp.lam, sigma=inp.sigma, alpha=inp.alpha, diffusion=inp.diffusion,
    )

    def one(r):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tr = run(run_cfg.replace(seed=seed_for(cfg.seed, r)), obj)
        return tr.particle_error[-1], tr.mean_error[-1]

    res = np.array(parallel_map(one, range(n_seeds), threads))
    t_dt, t_n, t_decay = budget_terms(inp, planned)
    return BudgetReport(planned, res[:, 0], res[:, 1], t_dt, t_n, t_decay, inp.eps_total)


def calibrate_constants(dt_report: RateReport, n_report: RateReport) -> tuple:
    """Surrogate ``(c_na, c_mfa)``: the largest observed ``error / dt`` and ``error * N``."""
    c_na = float(np.max(dt_report.errors / dt_report.x_values))
    c_mfa = float(np.max(n_report.errors * n_report.x_values))
    return c_na, c_mfa
