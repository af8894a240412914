"""Euler-Maruyama CBO iteration, run loop, and the continuous-time interpolant."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng
from .consensus import ConsensusResult, consensus_point
from .core import CboConfig, DiffusionKind, Ensemble, RunTrace
from .objectives import Objective

_CHUNK = 128


class StepError(RuntimeError):
    """The objective returned a non-finite value at a proposed position."""

    def __init__(self, step: int, particle: int, value: float):
        super().__init__(f"non-finite energy {value} at particle {particle} in step {step}")
        self.step = step
        self.particle = particle


@dataclass(frozen=True)
class StepReport:
    ensemble: Ensemble
    consensus: ConsensusResult
    evaluations: int


def initial_ensemble(cfg: CboConfig, obj: Objective, positions: Optional[np.ndarray] = None) -> Ensemble:
    x = cfg.init.sample(cfg.n_particles, cfg.seed) if positions is None else np.asarray(positions, float)
    return Ensemble(x, _energies(obj, x, 0), 0)


def _energies(obj: Objective, x: np.ndarray, step: int) -> np.ndarray:
    e = obj(x)
    bad = ~np.isfinite(e)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise StepError(step, i, float(e[i]))
    return e


def diffusion(kind: DiffusionKind, v: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """``D(v) dW`` row by row: ``|v| dW`` or ``v * dW``."""
    if kind is DiffusionKind.ISOTROPIC:
        return np.linalg.norm(v, axis=1, keepdims=True) * dw
    return v * dw


def _update(x, cons, cfg: CboConfig, dw):
    # (1 - c) x + c x_alpha equals x - c (x - x_alpha) and is exact at c = 1
    v = x - cons.point
    c = cfg.lam * cfg.dt
    return (1 - c) * x + c * cons.point + cfg.sigma * diffusion(cfg.diffusion, v, dw)


def em_step(
    ens: Ensemble,
    cfg: CboConfig,
    noise,
    obj: Objective,
    consensus: Optional[ConsensusResult] = None,
) -> StepReport:
    """One synchronous EM-CBO step.

    ``noise`` is a :class:`~emcbo.rng.NoiseTable` (increments for step
    ``ens.time_index`` are looked up) or an explicit ``(N, d)`` increment
    array. The consensus point is computed once from the pre-step ensemble.
    """
    if ens.time_index >= cfg.n_steps:
        raise IndexError(f"step {ens.time_index} is past n_steps = {cfg.n_steps}")
    if isinstance(noise, rng.NoiseTable):
        dw = noise.increments(ens.time_index, ens.n)
    else:
        dw = np.asarray(noise, dtype=float)
        if dw.shape != ens.positions.shape:
            raise ValueError("increment array must match the ensemble shape")
    cons = consensus if consensus is not None else consensus_point(ens.positions, ens.energies, cfg.alpha)
    x = _update(ens.positions, cons, cfg, dw)
    e = _energies(obj, x, ens.time_index)
    return StepReport(Ensemble(x, e, ens.time_index + 1), cons, ens.n)


def default_noise(cfg: CboConfig) -> rng.NoiseTable:
    return rng.NoiseTable(cfg.seed, cfg.n_particles, max(cfg.n_steps, 1), cfg.dim, cfg.dt)


def run(
    cfg: CboConfig,
    obj: Objective,
    x_star=None,
    noise: Optional[rng.NoiseTable] = None,
    positions: Optional[np.ndarray] = None,
    record_every: Optional[int] = None,
) -> RunTrace:
    """Iterate :func:`em_step` ``cfg.n_steps`` times from a sample of the initial law.

    Parameters
    ----------
    x_star : array_like, optional
        Minimizer for the variance functional and error columns. Defaults to
        ``obj.x_star``.
    noise : NoiseTable, optional
        Defaults to the table addressed by ``cfg.seed``.
    positions : ndarray, optional
        Explicit initial positions instead of sampling ``cfg.init``.
    record_every : int, optional
        Keep full positions at every ``record_every``-th step (including 0
        and the last) in ``trace.recorded``.
    """
    if cfg.lam * cfg.dt > 1:
        warnings.warn(f"lambda * dt = {cfg.lam * cfg.dt:.3g} > 1 overshoots the consensus point", stacklevel=2)
    if x_star is None:
        x_star = obj.x_star
    x_star = None if x_star is None else np.asarray(x_star, dtype=float).reshape(-1)
    noise = default_noise(cfg) if noise is None else noise
    if noise.n_steps < cfg.n_steps or noise.n_particles < cfg.n_particles or noise.dim != cfg.dim:
        raise ValueError("noise table is smaller than the configured run")
    if not math.isclose(noise.dt, cfg.dt, rel_tol=1e-12):
        raise ValueError("noise table step size differs from cfg.dt")

    n, d, k_max = cfg.n_particles, cfg.dim, cfg.n_steps
    rows = k_max + 1
    cons_pts = np.empty((rows, d))
    m2, mx, mw, evals = (np.empty(rows) for _ in range(4))
    vf = merr = perr = None
    if x_star is not None:
        vf, merr, perr = np.empty(rows), np.empty(rows), np.empty(rows)
    recorded = {}

    ens = initial_ensemble(cfg, obj, positions)
    total_evals = n
    block = None
    for k in range(rows):
        cons = consensus_point(ens.positions, ens.energies, cfg.alpha)
        x = ens.positions
        sq = np.sum(x**2, axis=1)
        cons_pts[k] = cons.point
        m2[k] = math.fsum(sq) / n
        mx[k] = math.sqrt(float(sq.max()))
        mw[k] = cons.max_weight
        evals[k] = total_evals
        if x_star is not None:
            dev = np.sum((x - x_star) ** 2, axis=1)
            perr[k] = math.fsum(dev) / n
            vf[k] = 0.5 * perr[k]
            mean = np.array([math.fsum(c) for c in x.T]) / n
            merr[k] = float(np.sum((mean - x_star) ** 2))
        if record_every and (k % record_every == 0 or k == k_max):
            recorded[k] = x.copy()
        if k == k_max:
            break
        if k % _CHUNK == 0:
            block = noise.block(k, min(k + _CHUNK, k_max), n)
        rep = em_step(ens, cfg, block[k % _CHUNK], obj, consensus=cons)
        ens = rep.ensemble
        total_evals += rep.evaluations

    breached = bool(cfg.moment_cap is not None and np.max(m2) > cfg.moment_cap)
    if breached:
        warnings.warn(f"second moment {np.max(m2):.3g} exceeded the cap {cfg.moment_cap}", stacklevel=2)
    return RunTrace(
        consensus_points=cons_pts,
        second_moment=m2,
        max_norm=mx,
        max_weight=mw,
        evaluations=evals.astype(np.int64),
        final=ens,
        variance_functional=vf,
        mean_error=merr,
        particle_error=perr,
        recorded=recorded,
        moment_cap_breached=breached,
    )


def interpolate(
    ens_k: Ensemble,
    consensus_k: ConsensusResult,
    cfg: CboConfig,
    noise: rng.NoiseTable,
    t: float,
    draw: int = 0,
) -> np.ndarray:
    """Continuous-time extension ``X(kdt) + b (t - kdt) + n (W_t - W_kdt)``.

    Drift and diffusion are frozen at the grid point ``k = ens_k.time_index``.
    ``W_t`` is a Brownian-bridge sample between the table's grid values;
    ``draw`` selects independent bridge samples.
    """
    k = ens_k.time_index
    t0 = k * cfg.dt
    s = t - t0
    if not (0 <= s < cfg.dt * (1 - 1e-15)):
        raise ValueError(f"t = {t} is outside [{t0}, {t0 + cfg.dt})")
    x = ens_k.positions
    if s == 0:
        return x.copy()
    dw = noise.increments(k, ens_k.n)
    key = rng.derive_key(noise.seed, rng.STREAM_BRIDGE, noise.level, k)
    w = rng.bridge_value(dw, cfg.dt, s, key, draw)
    v = x - consensus_k.point
    c = cfg.lam * s
    return (1 - c) * x + c * consensus_k.point + cfg.sigma * diffusion(cfg.diffusion, v, w)
