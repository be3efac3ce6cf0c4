#!/usr/bin/env python3
"""
Unit tests for Monte Carlo metrics.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent.parent))

import math

import numpy as np
import pytest

from harness.metrics import (
    MetricError,
    estimation_metrics,
    mean_or_nan,
    midpoint_grid,
    rate,
    rimse,
)
from slim.easi import POLY_ORDER


class TestEstimationMetrics:
    """Test bias, SD and RMSE."""

    def test_decomposition(self):
        """Test rmse^2 = bias^2 + sd^2 per coordinate."""
        rng = np.random.default_rng(0)
        estimates = rng.standard_normal((200, 3)) + np.array([0.1, -0.2, 0.0])
        truth = np.zeros(3)
        m = estimation_metrics(estimates, truth)
        np.testing.assert_allclose(m.rmse**2, m.bias**2 + m.sd**2, rtol=1e-10)
        assert m.count == 200

    def test_exact_values(self):
        """Test a hand-computed case."""
        m = estimation_metrics(np.array([[1.0], [3.0]]), np.array([1.0]))
        assert m.bias[0] == pytest.approx(1.0)
        assert m.sd[0] == pytest.approx(1.0)
        assert m.rmse[0] == pytest.approx(math.sqrt(2.0))

    def test_empty(self):
        """Test that no replications raise."""
        with pytest.raises(MetricError):
            estimation_metrics(np.empty((0, 2)), np.zeros(2))


class TestRates:
    """Test rejection and coverage shares."""

    def test_rate_skips_missing(self):
        assert rate([True, False, None, True]) == pytest.approx(2 / 3)

    def test_rate_all_missing(self):
        assert math.isnan(rate([None, None]))

    def test_mean_or_nan(self):
        assert mean_or_nan([1.0, None, 3.0]) == 2.0
        assert math.isnan(mean_or_nan([]))


class TestRimse:
    """Test the Engel-curve RIMSE."""

    def test_grid(self):
        """Test the midpoint grid on [-0.7, 0.9]."""
        grid = midpoint_grid((-0.7, 0.9), 0.1)
        assert len(grid) == 16
        assert grid[0] == pytest.approx(-0.65)
        assert grid[-1] == pytest.approx(0.85)

    def test_step_must_divide(self):
        """Test that a step not dividing the interval raises."""
        with pytest.raises(MetricError):
            midpoint_grid((-0.7, 0.9), 0.3)
        with pytest.raises(MetricError):
            midpoint_grid((0.9, -0.7), 0.1)

    def test_zero_error(self):
        """Test that exact coefficients give zero."""
        truth = np.arange(12, dtype=float).reshape(POLY_ORDER + 1, 2)
        assert rimse(np.stack([truth, truth]), truth) == 0.0

    def test_constant_offset(self):
        """Test that an intercept error delta gives |delta| sqrt(1.6)."""
        truth = np.zeros((POLY_ORDER + 1, 2))
        draw = truth.copy()
        draw[0, 0] = -0.3
        assert rimse(draw[None], truth) == pytest.approx(0.3 * math.sqrt(1.6), rel=1e-10)

    def test_shape_mismatch(self):
        """Test coefficient shape checks."""
        with pytest.raises(MetricError):
            rimse(np.zeros((2, 4, 2)), np.zeros((4, 2)))
        with pytest.raises(MetricError):
            rimse(np.zeros((0, POLY_ORDER + 1, 2)), np.zeros((POLY_ORDER + 1, 2)))
