#!/usr/bin/env python3
"""
Unit tests for reference distributions.
Tests chi-square quantiles, normal quantiles and the chi-square mixture tail.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent.parent))

import numpy as np
import pytest
from scipy import stats

from slim.distributions import (
    chi2_cdf,
    chi2_quantile,
    chi2_sf,
    mixture_cdf,
    mixture_integrand,
    mixture_sf,
    mixture_sf_mc,
    normal_quantile,
)


class TestChiSquare:
    """Test chi-square cdf, tail and quantile."""

    @pytest.mark.parametrize("df", [1, 2, 3, 10, 57])
    def test_quantile_matches_scipy(self, df):
        """Test agreement with scipy.stats.chi2.ppf."""
        for p in (0.01, 0.5, 0.95, 0.999):
            assert chi2_quantile(p, df) == pytest.approx(stats.chi2.ppf(p, df), rel=1e-8)

    def test_known_values(self):
        """Test textbook critical values."""
        assert chi2_quantile(0.95, 1) == pytest.approx(3.841459, rel=1e-6)
        assert chi2_quantile(0.95, 2) == pytest.approx(5.991465, rel=1e-6)

    def test_cdf_and_tail_complement(self):
        """Test cdf + sf = 1."""
        for x in (0.3, 2.0, 11.0):
            assert chi2_cdf(x, 4) + chi2_sf(x, 4) == pytest.approx(1.0)

    def test_nonpositive_argument(self):
        """Test the boundary at zero."""
        assert chi2_cdf(0.0, 3) == 0.0
        assert chi2_sf(-1.0, 3) == 1.0

    def test_invalid_probability(self):
        """Test that p outside (0, 1) is rejected."""
        with pytest.raises(ValueError):
            chi2_quantile(1.0, 2)
        with pytest.raises(ValueError):
            chi2_quantile(0.5, 0)


class TestNormal:
    """Test the normal quantile."""

    def test_two_sided_95(self):
        """Test z_{0.975}."""
        assert normal_quantile(0.975) == pytest.approx(1.959964, rel=1e-6)

    def test_symmetry(self):
        """Test z_p = -z_{1-p}."""
        assert normal_quantile(0.1) == pytest.approx(-normal_quantile(0.9))


class TestMixture:
    """Test the tail of chi2_df1 + tau chi2_df2."""

    def test_zero_weight_is_chi_square(self):
        """Test that tau = 0 reduces to chi2_df1."""
        assert mixture_sf(5.0, 2, 2, 0.0) == pytest.approx(chi2_sf(5.0, 2))

    def test_unit_weight_is_chi_square_sum(self):
        """Test tau = 1: chi2_a + chi2_b = chi2_{a+b}."""
        for df1, df2 in [(2, 2), (1, 3), (3, 1)]:
            assert mixture_sf(6.0, df1, df2, 1.0) == pytest.approx(chi2_sf(6.0, df1 + df2), abs=1e-7)

    def test_matches_monte_carlo(self):
        """Test quadrature against simulation for a fractional weight."""
        exact = mixture_sf(7.0, 2, 2, 0.4)
        approx = mixture_sf_mc(7.0, 2, 2, 0.4, draws=400_000, seed=1)
        assert exact == pytest.approx(approx, abs=5e-3)

    def test_monotone_in_x(self):
        """Test that the tail decreases in x."""
        values = [mixture_sf(x, 2, 2, 0.5) for x in np.linspace(0.5, 15.0, 8)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_cdf_complement(self):
        """Test cdf + sf = 1."""
        assert mixture_cdf(4.0, 3, 2, 0.2) + mixture_sf(4.0, 3, 2, 0.2) == pytest.approx(1.0)

    @pytest.mark.parametrize("df1, df2", [(2, 1), (1, 1), (3, 2), (2, 4)])
    def test_integrand_continuous_at_zero(self, df1, df2):
        """Test that the s = 0 value is the right limit of the integrand."""
        at_zero = mixture_integrand(0.0, 5.0, df1, df2, 0.3)
        near_zero = mixture_integrand(1e-9, 5.0, df1, df2, 0.3)
        assert at_zero == pytest.approx(near_zero, rel=1e-6, abs=1e-8)

    def test_integrand_at_zero_single_df(self):
        """Test sqrt(2/pi) P(chi2_df1 > x) at s = 0 for df2 = 1."""
        expected = np.sqrt(2.0 / np.pi) * chi2_sf(5.0, 2)
        assert mixture_integrand(0.0, 5.0, 2, 1, 0.3) == pytest.approx(expected, rel=1e-12)

    def test_negative_weight_rejected(self):
        """Test that tau < 0 is rejected."""
        with pytest.raises(ValueError):
            mixture_sf(1.0, 1, 1, -0.1)
