#!/usr/bin/env python3
"""
SLIM Reference Distributions
Chi-square quantiles by root-finding on the regularized incomplete gamma,
normal quantiles, and the chi-square mixture used by the plug-in J-test.
"""

import logging
import math
import warnings

import numpy as np
from scipy import integrate, optimize, special

logger = logging.getLogger(__name__)

QUANTILE_RTOL = 1e-10
MIXTURE_ABS_TOL = 1e-8
MIXTURE_FALLBACK_ERR = 1e-6
MIXTURE_MC_DRAWS = 1_000_000


def chi2_cdf(x: float, df: float) -> float:
    """P(chi2_df <= x)."""
    if x <= 0:
        return 0.0
    return float(special.gammainc(0.5 * df, 0.5 * x))


def chi2_sf(x: float, df: float) -> float:
    """P(chi2_df > x)."""
    if x <= 0:
        return 1.0
    return float(special.gammaincc(0.5 * df, 0.5 * x))


def chi2_quantile(p: float, df: float, rtol: float = QUANTILE_RTOL) -> float:
    """
    Quantile of the chi-square distribution.

    Brackets the root of P(a, x/2) - p by doubling, then solves with Brent's
    method at relative tolerance `rtol`.

    Args:
        p: Probability in (0, 1)
        df: Degrees of freedom (> 0)

    Returns:
        x with P(chi2_df <= x) = p
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"Probability must lie in (0, 1), got {p}")
    if df <= 0:
        raise ValueError(f"Degrees of freedom must be positive, got {df}")

    upper = max(1.0, float(df))
    while chi2_cdf(upper, df) < p:
        upper *= 2.0

    return float(
        optimize.brentq(lambda x: chi2_cdf(x, df) - p, 0.0, upper, rtol=rtol, xtol=1e-300)
    )


def normal_quantile(p: float) -> float:
    """Standard normal quantile."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"Probability must lie in (0, 1), got {p}")
    return float(special.ndtri(p))


def mixture_sf_mc(
    x: float, df1: int, df2: int, tau: float, draws: int = MIXTURE_MC_DRAWS, seed: int = 0
) -> float:
    """Monte Carlo estimate of P(chi2_df1 + tau * chi2_df2 > x)."""
    rng = np.random.default_rng(seed)
    sample = rng.chisquare(df1, size=draws) + tau * rng.chisquare(df2, size=draws)
    return float(np.mean(sample > x))


def mixture_integrand(s: float, x: float, df1: int, df2: int, tau: float) -> float:
    """
    P(chi2_df1 > x - tau s^2) times the density of sqrt(chi2_df2) at s.

    Finite at s = 0 for every df2 >= 1; the value there is the right limit.
    """
    log_norm = math.log(2.0) - 0.5 * df2 * math.log(2.0) - special.gammaln(0.5 * df2)
    if s == 0.0:
        return math.exp(log_norm) * chi2_sf(x, df1) if df2 == 1 else 0.0
    density = math.exp(log_norm + (df2 - 1) * math.log(s) - 0.5 * s * s)
    return density * chi2_sf(x - tau * s * s, df1)


def mixture_sf(x: float, df1: int, df2: int, tau: float) -> float:
    """
    Upper tail of chi2_df1 + tau * chi2_df2 (independent components).

    Conditions on the tau-weighted component V:
        P = int_0^{x/tau} f_df2(v) P(chi2_df1 > x - tau v) dv + P(chi2_df2 > x/tau)
    integrated over s = sqrt(v) so the density singularity at zero disappears.
    Falls back to Monte Carlo when the quadrature error estimate is too large.
    """
    if tau < 0:
        raise ValueError(f"Mixture weight must be nonnegative, got {tau}")
    if x <= 0:
        return 1.0
    if tau == 0:
        return chi2_sf(x, df1)

    upper = math.sqrt(x / tau)

    def integrand(s: float) -> float:
        return mixture_integrand(s, x, df1, df2, tau)

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            body, err = integrate.quad(integrand, 0.0, upper, epsabs=MIXTURE_ABS_TOL, limit=200)
        except integrate.IntegrationWarning as e:
            logger.warning(f"Mixture quadrature failed ({e}); using Monte Carlo")
            return mixture_sf_mc(x, df1, df2, tau)

    if err > MIXTURE_FALLBACK_ERR:
        logger.warning(f"Mixture quadrature error {err:.2e}; using Monte Carlo")
        return mixture_sf_mc(x, df1, df2, tau)

    return float(min(max(body + chi2_sf(x / tau, df2), 0.0), 1.0))


def mixture_cdf(x: float, df1: int, df2: int, tau: float) -> float:
    """P(chi2_df1 + tau * chi2_df2 <= x)."""
    return 1.0 - mixture_sf(x, df1, df2, tau)
