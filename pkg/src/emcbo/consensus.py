"""Laplace-weighted consensus point of an empirical measure."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConsensusResult:
    """
    Attributes
    ----------
    point : ndarray
        Weighted mean ``sum_i w_i x_i`` with ``w_i`` proportional to
        ``exp(-alpha E_i)``.
    log_partition : float
        ``log sum_i exp(-alpha (E_i - min E))``; lies in ``[0, log N]``.
    max_weight : float
        Largest normalized weight. Equal to 1 when the consensus point has
        collapsed onto a single particle.
    laplace_value : float
        ``-(1/alpha) log((1/N) sum_i exp(-alpha E_i))``, which lies in
        ``[min E, min E + log(N)/alpha]``.
    """

    point: np.ndarray
    log_partition: float
    max_weight: float
    laplace_value: float


def consensus_point(positions, energies, alpha: float) -> ConsensusResult:
    """Consensus point with the exponent shifted by the minimal energy.

    The shift cancels in the normalization, so the result equals the plain
    formula wherever that one does not underflow. Sums are exactly rounded
    (``math.fsum``), which makes the result independent of particle order.
    """
    x = np.asarray(positions, dtype=float)
    e = np.asarray(energies, dtype=float).reshape(-1)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("consensus of an empty ensemble")
    if e.shape[0] != x.shape[0]:
        raise ValueError("energies must have one entry per particle")
    if not np.all(np.isfinite(e)):
        bad = int(np.flatnonzero(~np.isfinite(e))[0])
        raise ValueError(f"non-finite energy at particle {bad}")
    if not alpha > 0:
        raise ValueError("alpha must be positive")

    n = x.shape[0]
    e_min = float(e.min())
    w = np.exp(-alpha * (e - e_min))
    total = math.fsum(w)  # >= 1: the minimizing particle contributes exp(0)
    wx = w[:, None] * x
    point = np.array([math.fsum(col) for col in wx.T]) / total
    # the weighted mean must stay inside the coordinate-wise hull
    point = np.clip(point, x.min(axis=0), x.max(axis=0))
    log_partition = math.log(total)
    return ConsensusResult(
        point=point,
        log_partition=log_partition,
        max_weight=float(w.max() / total),
        laplace_value=e_min - (log_partition - math.log(n)) / alpha,
    )
