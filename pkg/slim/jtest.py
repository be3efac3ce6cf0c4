#!/usr/bin/env python3
"""
SLIM Overidentification Tests
Plug-in, debiased plug-in and online Sargan-Hansen statistics.

    J   = n g_bar' W_MB g_bar                 ~ chi2_{dg-d} + tau chi2_d
    J_D = n g_bar' (W - W Phi (Phi'W Phi)^-1 Phi' W) g_bar   ~ chi2_{dg-d}
    J*  = tau_n g*_bar' W_MB g*_bar           ~ chi2_{dg-d}
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from slim.distributions import chi2_sf, mixture_sf
from slim.engine import IterationObserver
from slim.inference import deflating_factor
from slim.linalg import pinv_sym, sym_sqrt, symmetrize
from slim.model import Dataset, MomentModel, full_sample_jacobian, full_sample_moments, full_sample_outer

logger = logging.getLogger(__name__)


class JTestError(Exception):
    """Base exception for overidentification tests."""

    pass


class NotOveridentifiedError(JTestError):
    """Raised when d_g == d leaves no overidentifying restrictions."""

    pass


@dataclass
class JTestResult:
    """Statistic, reference degrees of freedom and p-value of one J variant."""

    statistic: float
    df: int
    tau: float
    p_value: float
    variant: str
    scaled_statistic: Optional[float] = None
    notes: list = field(default_factory=list)

    def reject(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _require_overidentified(d: int, d_g: int) -> int:
    if d_g <= d:
        raise NotOveridentifiedError(f"No overidentifying restrictions (d_g={d_g}, d={d})")
    return d_g - d


def mixture_weight(n: int, T_minus_N: int, B_g: int) -> float:
    """Finite-sample tau = n / ((T - N) B_g)."""
    if T_minus_N < 1 or B_g < 1:
        raise JTestError(f"Invalid counts T-N={T_minus_N}, B_g={B_g}")
    return n / float(T_minus_N * B_g)


def j_plugin(
    model: MomentModel,
    data: Dataset,
    theta: np.ndarray,
    W: np.ndarray,
    n: int,
    tau: float,
) -> JTestResult:
    """
    J = n g_bar(theta)' W g_bar(theta) against chi2_{dg-d} + tau chi2_d.

    Raises:
        NotOveridentifiedError: d_g == d
    """
    df = _require_overidentified(model.d, model.d_g)
    g_bar = full_sample_moments(model, data, theta)
    stat = float(n * g_bar @ W @ g_bar)
    p_value = mixture_sf(stat, df, model.d, tau)
    return JTestResult(statistic=stat, df=df, tau=float(tau), p_value=p_value, variant="plugin")


def debiasing_projection(W: np.ndarray, Phi: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    I - W^1/2 Phi (Phi'W Phi)^+ Phi' W^1/2 and the rank of Phi'W Phi.
    """
    root = sym_sqrt(W)
    inv, rank = pinv_sym(Phi.T @ W @ Phi)
    X = root @ Phi
    return symmetrize(np.eye(W.shape[0]) - X @ inv @ X.T), rank


def debiased_weight(W: np.ndarray, Phi: np.ndarray) -> Tuple[np.ndarray, int]:
    """W - W Phi (Phi'W Phi)^+ Phi' W and the rank of Phi'W Phi."""
    inv, rank = pinv_sym(Phi.T @ W @ Phi)
    WPhi = W @ Phi
    return symmetrize(W - WPhi @ inv @ WPhi.T), rank


def j_debiased(
    model: MomentModel,
    data: Dataset,
    theta: np.ndarray,
    n: int,
    W: Optional[np.ndarray] = None,
) -> JTestResult:
    """
    Debiased J_D against chi2_{dg-d}.

    Phi and (unless supplied) W = (n^-1 sum gg')^+ are evaluated at theta.
    A rank-deficient Phi'W Phi lowers the effective degrees of freedom to
    d_g - rank, with a warning.
    """
    _require_overidentified(model.d, model.d_g)
    Phi = full_sample_jacobian(model, data, theta)
    if W is None:
        W, _ = pinv_sym(full_sample_outer(model, data, theta))
    M, rank = debiased_weight(W, Phi)

    notes = []
    if rank < model.d:
        message = f"Phi'W Phi has rank {rank} < d={model.d}; df reduced to {model.d_g - rank}"
        logger.warning(message)
        notes.append(message)
    df = model.d_g - rank

    g_bar = full_sample_moments(model, data, theta)
    stat = float(max(n * g_bar @ M @ g_bar, 0.0))
    return JTestResult(
        statistic=stat, df=df, tau=0.0, p_value=chi2_sf(stat, df), variant="debiased", notes=notes
    )


@dataclass
class OnlineGbarState:
    """Running mean of g~_t over the refinement stage."""

    d_g: int
    g_bar: np.ndarray = field(init=False)
    count: int = 0

    def __post_init__(self):
        self.g_bar = np.zeros(self.d_g)

    def update(self, g_tilde: np.ndarray) -> "OnlineGbarState":
        self.count += 1
        k = self.count
        self.g_bar = ((k - 1) / k) * self.g_bar + (1.0 / k) * np.asarray(g_tilde, dtype=float)
        return self


class OnlineGbarAccumulator(IterationObserver):
    """Observer averaging the moment batch means."""

    def __init__(self, d_g: int):
        self.state = OnlineGbarState(d_g)

    def observe(self, t, theta, theta_bar, g_tilde) -> None:
        self.state.update(g_tilde)


def j_online(
    state: OnlineGbarState,
    W_MB: np.ndarray,
    n: int,
    d: int,
    B_g: int,
    T_minus_N: Optional[int] = None,
) -> JTestResult:
    """
    J* = tau_n g*' W_MB g* against chi2_{dg-d}.

    The undeflated n g*' W_MB g* is reported as `scaled_statistic`.

    Raises:
        JTestError: No accumulated iterations
    """
    if state.count == 0:
        raise JTestError("Online moment average is empty")
    df = _require_overidentified(d, state.d_g)
    steps = state.count if T_minus_N is None else T_minus_N

    quad = float(state.g_bar @ W_MB @ state.g_bar)
    tau_n = deflating_factor(n, steps, B_g)
    stat = tau_n * quad
    return JTestResult(
        statistic=stat,
        df=df,
        tau=mixture_weight(n, steps, B_g),
        p_value=chi2_sf(stat, df),
        variant="online",
        scaled_statistic=n * quad,
    )
