#!/usr/bin/env python3
"""
Unit tests for schedules.
Tests learning rates, batch growth, warm-start settings and gamma0 selection.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent.parent))

import math

import numpy as np
import pytest

from slim.model import Dataset, LinearIvDesign, generate_linear_iv, model_from_linear_iv
from slim.schedule import (
    BatchSchedule,
    LearningRate,
    ScheduleError,
    TuningError,
    WarmStartConfig,
    jacobian_norms,
    lower_median,
    rate_at,
    select_gamma0,
)


class TestLearningRate:
    """Test gamma_t = gamma0 (t + n_star)^-a."""

    def test_first_rate_is_gamma0(self):
        """Test t=1 without offset."""
        assert rate_at(LearningRate(0.3), 1) == pytest.approx(0.3)

    def test_decay(self):
        """Test the polynomial decay."""
        lr = LearningRate(1.0, a=0.75)
        assert lr.rate(16) == pytest.approx(16 ** -0.75)

    def test_offset_continues_schedule(self):
        """Test that an offset schedule at local t equals the global rate."""
        lr = LearningRate(0.5, a=0.6)
        shifted = lr.with_offset(100)
        for t in (1, 10, 250):
            assert shifted.rate(t) == pytest.approx(lr.rate(100 + t))

    @pytest.mark.parametrize("kwargs", [{"gamma0": 0.0}, {"gamma0": 1.0, "a": 0.5}, {"gamma0": 1.0, "a": 1.0}])
    def test_invalid(self, kwargs):
        """Test parameter validation."""
        with pytest.raises(ScheduleError):
            LearningRate(**kwargs)

    def test_index_must_be_positive(self):
        """Test t >= 1."""
        with pytest.raises(ScheduleError):
            LearningRate(1.0).rate(0)


class TestBatchSchedule:
    """Test Jacobian batch growth."""

    def test_constant(self):
        """Test that constant growth keeps B_G0."""
        schedule = BatchSchedule(32, 16)
        assert schedule.jacobian_batch(1000) == 16
        assert schedule.moment_batch(1000) == 32

    def test_logarithmic_after_start(self):
        """Test B_G0 + floor(ln(t - start))."""
        schedule = BatchSchedule(32, 32, "logarithmic", start=100)
        assert schedule.jacobian_batch(100) == 32
        assert schedule.jacobian_batch(101) == 32
        assert schedule.jacobian_batch(103) == 33
        assert schedule.jacobian_batch(100 + 1000) == 32 + math.floor(math.log(1000))

    def test_invalid(self):
        """Test validation."""
        with pytest.raises(ScheduleError):
            BatchSchedule(0, 1)
        with pytest.raises(ScheduleError):
            BatchSchedule(1, 1, "quadratic")


class TestWarmStartConfig:
    """Test warm-start settings."""

    def test_rate_and_blocks(self):
        """Test the epoch rate and block count."""
        cfg = WarmStartConfig(B_ws=100, E_ws=2, gamma0_ws=0.2, a=0.6)
        assert cfg.rate(1) == pytest.approx(0.2)
        assert cfg.rate(4) == pytest.approx(0.2 * 4 ** -0.6)
        assert cfg.blocks(1050) == 10
        assert cfg.total_updates(1050) == 10 * 9 * 2

    def test_from_dict_rejects_unknown(self):
        """Test strict parsing."""
        with pytest.raises(ScheduleError):
            WarmStartConfig.from_dict({"B_ws": 10, "epochs": 3})


class TestGammaSelection:
    """Test the Jacobian-norm rule for gamma0."""

    def test_lower_median(self):
        """Test the lower order statistic for even counts."""
        assert lower_median(np.array([4.0, 1.0, 3.0, 2.0])) == 2.0
        assert lower_median(np.array([5.0, 1.0, 3.0])) == 3.0

    def test_gamma0_formula(self):
        """Test gamma0 = B_main / (s0 Psi0 B_ws) against the norms."""
        design = LinearIvDesign()
        model = model_from_linear_iv(design)
        data = generate_linear_iv(design, 4000, seed=0)
        cfg = WarmStartConfig(B_ws=200)
        norms = jacobian_norms(model, data, design.theta, 200, seed=5)
        assert norms.shape == (20,)
        gamma0 = select_gamma0(model, data, design.theta, cfg, B_main=32, s0=5.0, seed=5)
        assert gamma0 == pytest.approx(32 / (5.0 * lower_median(norms) * 200))

    def test_limit_caps_batches(self):
        """Test the batch index set limit."""
        design = LinearIvDesign()
        model = model_from_linear_iv(design)
        data = generate_linear_iv(design, 1000, seed=0)
        assert jacobian_norms(model, data, design.theta, 10, limit=7, seed=1).shape == (7,)

    def test_zero_jacobian_raises(self):
        """Test Psi0 = 0."""
        design = LinearIvDesign()
        model = model_from_linear_iv(design)
        data = generate_linear_iv(design, 200, seed=0)
        zero = data.observations.copy()
        zero[:, 1:3] = 0.0
        with pytest.raises(TuningError):
            select_gamma0(model, Dataset(zero), design.theta, WarmStartConfig(B_ws=50), B_main=32)

    def test_non_finite_start_raises(self):
        """Test non-finite warm-start estimate."""
        design = LinearIvDesign()
        model = model_from_linear_iv(design)
        data = generate_linear_iv(design, 200, seed=0)
        with pytest.raises(TuningError):
            select_gamma0(model, data, np.array([np.nan, 0.0]), WarmStartConfig(B_ws=50), B_main=32)
