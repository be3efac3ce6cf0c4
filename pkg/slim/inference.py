#!/usr/bin/env python3
"""
SLIM Inference
Random-scaling inference from the averaged path and plug-in Wald inference
from full-sample estimates at the stochastic estimate.

Random-scaling matrix, recursively:
    A_t = A_{t-1} + t^2 x_t x_t',  b_t = b_{t-1} + t^2 x_t,  x_t = R theta_bar_t
    V_t = t^-2 (A_t - x_t b_t' - b_t x_t' + x_t x_t' t(t+1)(2t+1)/6)
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from slim.critical_values import rs_critical_value
from slim.distributions import chi2_quantile, normal_quantile
from slim.engine import IterationObserver
from slim.linalg import CONDITION_WARN, condition_number_sym, pinv_sym, symmetrize
from slim.model import Dataset, MomentModel, full_sample_jacobian, full_sample_outer

logger = logging.getLogger(__name__)

RANK_RTOL = 1e-10
CONDITION_FAIL = 1e15


class InferenceError(Exception):
    """Raised when a test statistic cannot be formed."""

    pass


@dataclass
class Hypothesis:
    """H0: R theta = c with R of full row rank."""

    R: np.ndarray
    c: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if self.c.shape != (self.R.shape[0],):
            raise InferenceError(f"c has shape {self.c.shape}, expected ({self.R.shape[0]},)")
        if self.R.shape[0] > self.R.shape[1]:
            raise InferenceError(f"More restrictions ({self.R.shape[0]}) than parameters")
        sv = np.linalg.svd(self.R, compute_uv=False)
        if sv[-1] <= RANK_RTOL * sv[0]:
            raise InferenceError("Restriction matrix R is not of full row rank")

    @property
    def ell(self) -> int:
        return self.R.shape[0]

    @classmethod
    def coordinate(cls, d: int, index: int, value: float = 0.0, name: str = "") -> "Hypothesis":
        """H0: theta[index] = value."""
        R = np.zeros((1, d))
        R[0, index] = 1.0
        return cls(R, np.array([value]), name or f"theta[{index}]")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], d: int) -> "Hypothesis":
        """From {"index": k, "value": v} or {"R": [[...]], "c": [...]}."""
        if "index" in data:
            return cls.coordinate(d, int(data["index"]), float(data.get("value", 0.0)), data.get("name", ""))
        if "R" in data:
            return cls(np.asarray(data["R"]), np.asarray(data.get("c", 0.0)), data.get("name", ""))
        raise InferenceError(f"Hypothesis needs 'index' or 'R': {data}")


@dataclass
class RandomScalingState:
    """
    Accumulators for V_t(R).

    Values are shifted by the first R theta_bar (V is shift invariant) and
    summed with Kahan compensation.
    """

    ell: int
    t: int = 0
    A: np.ndarray = field(init=False)
    b: np.ndarray = field(init=False)
    shift: Optional[np.ndarray] = None
    current: Optional[np.ndarray] = None
    _A_comp: np.ndarray = field(init=False, repr=False)
    _b_comp: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.A = np.zeros((self.ell, self.ell))
        self.b = np.zeros(self.ell)
        self._A_comp = np.zeros((self.ell, self.ell))
        self._b_comp = np.zeros(self.ell)

    @property
    def Rtheta_bar(self) -> Optional[np.ndarray]:
        """Current R theta_bar_t (unshifted)."""
        if self.current is None:
            return None
        return self.current + self.shift

    def variance(self) -> np.ndarray:
        """V_t(R)."""
        if self.t == 0:
            raise InferenceError("Random-scaling state has no observations")
        t = float(self.t)
        x = self.current
        sum_sq = t * (t + 1.0) * (2.0 * t + 1.0) / 6.0
        V = self.A - np.outer(x, self.b) - np.outer(self.b, x) + np.outer(x, x) * sum_sq
        return symmetrize(V / (t * t))


def _kahan_add(total: np.ndarray, comp: np.ndarray, value: np.ndarray):
    y = value - comp
    new_total = total + y
    comp = (new_total - total) - y
    return new_total, comp


def rs_update(state: RandomScalingState, theta_bar_t: np.ndarray, R: np.ndarray) -> RandomScalingState:
    """Add R theta_bar_t with weight t^2."""
    x = R @ np.asarray(theta_bar_t, dtype=float)
    if state.shift is None:
        state.shift = x.copy()
    x = x - state.shift

    state.t += 1
    weight = float(state.t) ** 2
    state.A, state._A_comp = _kahan_add(state.A, state._A_comp, weight * np.outer(x, x))
    state.b, state._b_comp = _kahan_add(state.b, state._b_comp, weight * x)
    state.current = x
    return state


def rs_variance_direct(rtheta_bars: np.ndarray) -> np.ndarray:
    """
    V_t from partial sums: t^-2 sum_s S_s S_s', S_s = s (x_s - x_t).

    Args:
        rtheta_bars: (t, ell) stream of R theta_bar_s
    """
    xs = np.asarray(rtheta_bars, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    t = xs.shape[0]
    s = np.arange(1, t + 1, dtype=float)[:, None]
    S = s * (xs - xs[-1])
    return S.T @ S / float(t) ** 2


class RandomScalingAccumulator(IterationObserver):
    """Observer feeding theta_bar into a random-scaling state."""

    def __init__(self, R: np.ndarray):
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        self.state = RandomScalingState(ell=self.R.shape[0])

    def observe(self, t, theta, theta_bar, g_tilde) -> None:
        rs_update(self.state, theta_bar, self.R)

    def reset(self) -> None:
        self.state = RandomScalingState(ell=self.R.shape[0])

    def variance(self) -> np.ndarray:
        return self.state.variance()


@dataclass
class InferenceResult:
    """Outcome of one Wald test; confidence bounds only for a single restriction."""

    statistic: float
    critical_value: float
    reject: bool
    scaling_factor: float
    mode: str
    alpha: float = 0.05
    estimate: List[float] = field(default_factory=list)
    ci_lower: Optional[float] = None
    ci_upper: Optional[float] = None

    @property
    def ci_length(self) -> Optional[float]:
        if self.ci_lower is None or self.ci_upper is None:
            return None
        return self.ci_upper - self.ci_lower

    def covers(self, value: float) -> Optional[bool]:
        if self.ci_lower is None or self.ci_upper is None:
            return None
        return self.ci_lower <= value <= self.ci_upper

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def deflating_factor(n: int, N_eff: int, B_g: int) -> float:
    """tau_n = (1/n + 1/(N_eff B_g))^-1."""
    if n < 1 or N_eff < 1 or B_g < 1:
        raise InferenceError(f"Invalid counts n={n}, N_eff={N_eff}, B_g={B_g}")
    return 1.0 / (1.0 / n + 1.0 / (N_eff * B_g))


def _check_variance(V: np.ndarray, label: str) -> None:
    if not np.all(np.isfinite(V)):
        raise InferenceError(f"{label} is not finite")
    cond = condition_number_sym(V)
    if not np.isfinite(cond) or cond > CONDITION_FAIL or np.linalg.eigvalsh(V)[0] <= 0:
        raise InferenceError(f"{label} is singular; run more iterations")
    if cond > CONDITION_WARN:
        logger.warning(f"{label} is ill-conditioned (condition number {cond:.3e})")


def _finish(
    estimate: np.ndarray,
    diff: np.ndarray,
    cov: np.ndarray,
    scale: float,
    cv: float,
    ci_cv: float,
    mode: str,
    alpha: float,
    root_form: bool,
) -> InferenceResult:
    """Wald form scale * diff' cov^-1 diff, or |t| for root_form."""
    wald = float(scale * diff @ np.linalg.solve(cov, diff))
    statistic = float(np.sqrt(max(wald, 0.0))) if root_form else wald

    lower = upper = None
    if diff.shape[0] == 1:
        half = ci_cv * float(np.sqrt(cov[0, 0] / scale))
        lower, upper = float(estimate[0] - half), float(estimate[0] + half)

    return InferenceResult(
        statistic=statistic,
        critical_value=float(cv),
        reject=bool(statistic > cv),
        scaling_factor=float(scale),
        mode=mode,
        alpha=alpha,
        estimate=[float(v) for v in estimate],
        ci_lower=lower,
        ci_upper=upper,
    )


def rs_wald(
    state: RandomScalingState,
    theta_bar: np.ndarray,
    hyp: Hypothesis,
    n: int,
    N_eff: int,
    B_g: int,
    mode: str = "sampling",
    alpha: float = 0.05,
) -> InferenceResult:
    """
    Random-scaling Wald test.

    Sampling mode scales by tau_n = (1/n + 1/(N_eff B_g))^-1; fixed mode by
    N_eff B_g (inference on the full-sample estimator itself). A single
    restriction is reported as |t| against the two-sided value, with the
    interval R theta_bar +/- cv sqrt(B_g V / scale).

    Raises:
        InferenceError: Singular V or invalid counts
    """
    if state.ell != hyp.ell:
        raise InferenceError(f"State tracks {state.ell} restrictions, hypothesis has {hyp.ell}")
    if mode == "sampling":
        scale = deflating_factor(n, N_eff, B_g)
        label = "random_scaling_sampling"
    elif mode == "fixed":
        if N_eff < 1 or B_g < 1:
            raise InferenceError(f"Invalid counts N_eff={N_eff}, B_g={B_g}")
        scale = float(N_eff * B_g)
        label = "random_scaling_fixed"
    else:
        raise InferenceError(f"Unknown random-scaling mode: {mode}")

    V = B_g * state.variance()
    _check_variance(V, "Random-scaling matrix")

    estimate = hyp.R @ np.asarray(theta_bar, dtype=float)
    cv = rs_critical_value(hyp.ell, alpha)
    return _finish(estimate, estimate - hyp.c, V, scale, cv, cv, label, alpha, hyp.ell == 1)


def plugin_covariance(
    model: MomentModel, data: Dataset, theta: np.ndarray, weight: Optional[np.ndarray] = None
) -> np.ndarray:
    """(Phi' W Phi)^+ with Phi, W = (n^-1 sum gg')^+ evaluated at theta."""
    Phi = full_sample_jacobian(model, data, theta)
    if weight is None:
        weight, _ = pinv_sym(full_sample_outer(model, data, theta))
    cov, rank = pinv_sym(Phi.T @ weight @ Phi)
    if rank < model.d:
        logger.warning(f"Plug-in bread matrix has rank {rank} < d={model.d}")
    return cov


def plugin_wald(
    model: MomentModel,
    data: Dataset,
    theta_bar_T: np.ndarray,
    hyp: Hypothesis,
    n: int,
    T_minus_N: int,
    B_g: int,
    alpha: float = 0.05,
    weight: Optional[np.ndarray] = None,
) -> InferenceResult:
    """
    Plug-in Wald test at the refined estimate against chi2_ell.

    The single-restriction interval uses z_{1 - alpha/2}.

    Raises:
        InferenceError: Singular R (Phi'W Phi)^+ R'
    """
    cov = plugin_covariance(model, data, theta_bar_T, weight)
    V_R = symmetrize(hyp.R @ cov @ hyp.R.T)
    _check_variance(V_R, "Plug-in variance")

    scale = deflating_factor(n, T_minus_N, B_g)
    estimate = hyp.R @ np.asarray(theta_bar_T, dtype=float)
    cv = chi2_quantile(1.0 - alpha, hyp.ell)
    z = normal_quantile(1.0 - alpha / 2.0)
    return _finish(estimate, estimate - hyp.c, V_R, scale, cv, z, "plugin", alpha, False)

