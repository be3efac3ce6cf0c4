#!/usr/bin/env python3
"""
SLIM Monte Carlo Metrics
Bias/SD/RMSE across replications, coverage and rejection rates, and the
root integrated mean squared error of estimated Engel curves.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from slim.easi import POLY_ORDER, engel_curve

logger = logging.getLogger(__name__)

GRID_TOL = 1e-9


class MetricError(Exception):
    """Raised for empty replication sets or malformed grids."""

    pass


@dataclass
class EstimationMetrics:
    """Population moments of estimate - truth over completed replications."""

    bias: np.ndarray
    sd: np.ndarray
    rmse: np.ndarray
    count: int


def estimation_metrics(estimates: np.ndarray, truth: np.ndarray) -> EstimationMetrics:
    """
    Bias, SD (ddof=0) and RMSE per coordinate, so rmse^2 = bias^2 + sd^2.

    Args:
        estimates: (reps, d) estimates
        truth: (d,) true parameter
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    if est.shape[0] == 0:
        raise MetricError("No completed replications")
    errors = est - np.asarray(truth, dtype=float)
    bias = errors.mean(axis=0)
    sd = est.std(axis=0, ddof=0)
    rmse = np.sqrt(np.mean(errors**2, axis=0))
    return EstimationMetrics(bias=bias, sd=sd, rmse=rmse, count=est.shape[0])


def rate(flags: Sequence[Optional[bool]]) -> float:
    """Share of True among non-missing flags; NaN when all are missing."""
    values = [bool(f) for f in flags if f is not None]
    if not values:
        return float("nan")
    return float(np.mean(values))


def mean_or_nan(values: Sequence[Optional[float]]) -> float:
    kept = [float(v) for v in values if v is not None]
    return float(np.mean(kept)) if kept else float("nan")


def midpoint_grid(domain: Sequence[float], step: float) -> np.ndarray:
    """
    Cell midpoints of [lo, hi] cut at width `step`.

    Raises:
        MetricError: step does not divide hi - lo
    """
    lo, hi = float(domain[0]), float(domain[1])
    if step <= 0 or hi <= lo:
        raise MetricError(f"Invalid grid: domain={domain}, step={step}")
    cells = (hi - lo) / step
    n_cells = int(round(cells))
    if n_cells < 1 or abs(cells - n_cells) > GRID_TOL * max(1.0, cells):
        raise MetricError(f"Step {step} does not divide [{lo}, {hi}]")
    return lo + step * (np.arange(n_cells) + 0.5)


def rimse(
    b_draws: np.ndarray,
    truth: np.ndarray,
    domain: Sequence[float] = (-0.7, 0.9),
    step: float = 0.1,
) -> float:
    """
    sqrt( sum_j integral E( sum_r (b^_jr - b_jr) x^r )^2 dx ).

    The integral is a midpoint sum at width `step`; the expectation is the
    mean over replications.

    Args:
        b_draws: (reps, POLY_ORDER + 1, m) estimated Engel coefficients
        truth: (POLY_ORDER + 1, m) true coefficients
    """
    draws = np.asarray(b_draws, dtype=float)
    if draws.ndim == 2:
        draws = draws[None]
    if draws.shape[0] == 0:
        raise MetricError("RIMSE needs at least one replication")
    truth = np.asarray(truth, dtype=float)
    if draws.shape[1:] != truth.shape or truth.shape[0] != POLY_ORDER + 1:
        raise MetricError(f"Coefficient shapes differ: {draws.shape[1:]} vs {truth.shape}")

    grid = midpoint_grid(domain, step)
    sq = np.stack([engel_curve(b - truth, grid) ** 2 for b in draws])
    integrated = step * sq.mean(axis=0).sum()
    return float(np.sqrt(integrated))
