#!/usr/bin/env python3
"""
SLIM Full-Sample GMM Oracle
Damped Gauss-Newton minimization of g_bar(theta)' W g_bar(theta), the two-step
efficient estimator and the closed form for moments affine in theta.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from slim.linalg import pinv_sym
from slim.model import Dataset, MomentModel, full_sample_jacobian, full_sample_moments, full_sample_outer

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100
MAX_HALVINGS = 30


@dataclass
class GmmSolveReport:
    """Result of a full-sample GMM solve."""

    theta_hat: np.ndarray
    objective: float
    iterations: int
    converged: bool
    gradient_norm: float
    weight: Optional[np.ndarray] = field(default=None, repr=False)


def gmm_objective(model: MomentModel, data: Dataset, theta: np.ndarray, W: np.ndarray) -> float:
    """g_bar' W g_bar."""
    g_bar = full_sample_moments(model, data, theta)
    return float(g_bar @ W @ g_bar)


def solve_full_gmm(
    model: MomentModel,
    data: Dataset,
    W: np.ndarray,
    theta0: Optional[np.ndarray] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> GmmSolveReport:
    """
    Gauss-Newton with step halving.

    Step: -(G'WG)^+ G'W g_bar; halved up to 30 times until the objective does
    not increase. Converged when ||G'W g_bar|| <= tol. Non-convergence is
    reported, not raised.
    """
    theta = np.zeros(model.d) if theta0 is None else np.array(theta0, dtype=float, copy=True)
    g_bar = full_sample_moments(model, data, theta)
    objective = float(g_bar @ W @ g_bar)
    grad_norm = np.inf

    for iteration in range(max_iter + 1):
        G = full_sample_jacobian(model, data, theta)
        gradient = G.T @ W @ g_bar
        grad_norm = float(np.linalg.norm(gradient))
        if grad_norm <= tol:
            logger.debug(f"Gauss-Newton converged in {iteration} iterations")
            return GmmSolveReport(theta, objective, iteration, True, grad_norm)
        if iteration == max_iter:
            break

        hessian, _ = pinv_sym(G.T @ W @ G)
        step = -hessian @ gradient
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            candidate = theta + scale * step
            cand_g = full_sample_moments(model, data, candidate)
            cand_obj = float(cand_g @ W @ cand_g)
            if np.isfinite(cand_obj) and cand_obj <= objective:
                break
            scale *= 0.5
        else:
            logger.warning(f"Line search failed at iteration {iteration}")
            return GmmSolveReport(theta, objective, iteration, False, grad_norm)

        theta, g_bar, objective = candidate, cand_g, cand_obj

    logger.warning(f"Gauss-Newton did not converge in {max_iter} iterations (|grad|={grad_norm:.3e})")
    return GmmSolveReport(theta, objective, max_iter, False, grad_norm)


def affine_gmm_closed_form(model: MomentModel, data: Dataset, W: np.ndarray) -> np.ndarray:
    """
    theta = -(G'WG)^-1 G'W g_bar(0) for moments affine in theta.
    """
    zero = np.zeros(model.d)
    G = full_sample_jacobian(model, data, zero)
    g0 = full_sample_moments(model, data, zero)
    return -np.linalg.solve(G.T @ W @ G, G.T @ W @ g0)


def two_step_efficient_gmm(
    model: MomentModel,
    data: Dataset,
    theta0: Optional[np.ndarray] = None,
    W1: Optional[np.ndarray] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> GmmSolveReport:
    """
    Solve with W1 (identity by default), re-weight with (n^-1 sum gg')^+ at the
    first-step estimate and solve again. The report keeps the second-step weight.
    """
    W1 = np.eye(model.d_g) if W1 is None else W1
    first = solve_full_gmm(model, data, W1, theta0, max_iter, tol)
    W2, _ = pinv_sym(full_sample_outer(model, data, first.theta_hat))
    second = solve_full_gmm(model, data, W2, first.theta_hat, max_iter, tol)
    second.weight = W2
    logger.info(
        f"Two-step GMM: objective {second.objective:.6g}, converged={second.converged}"
    )
    return second
