#!/usr/bin/env python3
"""
Unit tests for the second-order refinement.
Tests operator construction, weight structure, the continued learning rate
and convergence toward the efficient estimator.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent.parent))

import numpy as np
import pytest

from slim.easi import default_easi_config, generate_easi, model_from_easi
from slim.engine import IterationObserver, IterationState, MiniBatchPair, run_first_order
from slim.linalg import pinv_sym
from slim.model import (
    Dataset,
    LinearIvDesign,
    full_sample_jacobian,
    full_sample_outer,
    generate_linear_iv,
    model_from_linear_iv,
)
from slim.oracle import two_step_efficient_gmm
from slim.refine import (
    RefinementError,
    build_operators,
    minibatch_second_moment,
    run_refinement,
    step_second_order,
)
from slim.schedule import BatchSchedule, LearningRate, WarmStartConfig, select_gamma0


class StepRecorder(IterationObserver):
    """Keeps the step index of every call."""

    def __init__(self):
        self.steps = []

    def observe(self, t, theta, theta_bar, g_tilde):
        self.steps.append(t)


@pytest.fixture(scope="module")
def linear_iv():
    design = LinearIvDesign(d_g=6, endogeneity=0.6, error_scale=1.5)
    model = model_from_linear_iv(design)
    data = generate_linear_iv(design, 5000, seed=21)
    return design, model, data


class TestOperators:
    """Test Phi, W and the preconditioner."""

    def test_fullsample_weight(self, linear_iv):
        """Test W = (n^-1 sum gg')^+ and precond = (Phi'W Phi)^+."""
        design, model, data = linear_iv
        ops = build_operators(model, data, design.theta, M_MB=1, B_g=32, N=10, mode="fullsample", seed=0)
        expected_W, _ = pinv_sym(full_sample_outer(model, data, design.theta))
        Phi = full_sample_jacobian(model, data, design.theta)
        np.testing.assert_allclose(ops.W, expected_W, rtol=1e-10)
        np.testing.assert_allclose(ops.Phi, Phi, rtol=1e-12)
        np.testing.assert_allclose(ops.precond, np.linalg.inv(Phi.T @ expected_W @ Phi), rtol=1e-8)
        assert ops.full_rank
        assert ops.N == 10
        assert ops.M_MB == 0

    def test_minibatch_second_moment_scale(self, linear_iv):
        """Test that (B_g / M) sum g~ g~' estimates the full-sample outer product."""
        design, model, data = linear_iv
        S = minibatch_second_moment(model, data, design.theta, 4000, 32, np.random.default_rng(1))
        target = full_sample_outer(model, data, design.theta)
        np.testing.assert_allclose(S, S.T, atol=1e-12)
        assert np.linalg.norm(S - target) / np.linalg.norm(target) < 0.2

    def test_minibatch_reproducible(self, linear_iv):
        """Test that the weight depends only on the stream."""
        design, model, data = linear_iv
        a = build_operators(model, data, design.theta, M_MB=200, B_g=16, seed=5)
        b = build_operators(model, data, design.theta, M_MB=200, B_g=16, seed=5)
        np.testing.assert_array_equal(a.W, b.W)

    def test_kronecker_diagonal_structure(self):
        """Test that cross-equation blocks of W vanish."""
        config = default_easi_config()
        model = model_from_easi(config)
        data = generate_easi(config, 2000, seed=3)
        ops = build_operators(
            model, data, config.theta_true, M_MB=1, B_g=8, mode="fullsample",
            structure="kronecker-diagonal", seed=0,
        )
        size = model.d_g // model.n_equations
        assert model.n_equations > 1
        scale = np.abs(ops.W).max()
        assert np.abs(ops.W[:size, size:]).max() <= 1e-10 * scale
        assert np.abs(ops.W[size:, :size]).max() <= 1e-10 * scale

    def test_rank_deficient_jacobian_warns(self, linear_iv):
        """Test that a collinear Jacobian is reported, not raised."""
        design, model, data = linear_iv
        obs = data.observations.copy()
        obs[:, 2] = obs[:, 1]
        ops = build_operators(model, Dataset(obs), design.theta, M_MB=1, B_g=8, mode="fullsample")
        assert ops.rank == 1
        assert not ops.full_rank
        assert ops.warnings

    def test_zero_weight_raises(self, linear_iv):
        """Test that exact moments give an undefined weight."""
        design, model, data = linear_iv
        obs = data.observations.copy()
        obs[:, 0] = obs[:, 1:3] @ design.theta
        with pytest.raises(RefinementError):
            build_operators(model, Dataset(obs), design.theta, M_MB=1, B_g=8, mode="fullsample")

    @pytest.mark.parametrize(
        "kwargs",
        [{"mode": "diagonal"}, {"structure": "banded"}, {"M_MB": 0}],
    )
    def test_invalid_settings(self, linear_iv, kwargs):
        """Test rejected modes and sizes."""
        design, model, data = linear_iv
        params = {"M_MB": 10, "B_g": 8}
        params.update(kwargs)
        with pytest.raises(RefinementError):
            build_operators(model, data, design.theta, **params)

    def test_non_finite_average_raises(self, linear_iv):
        """Test non-finite first-stage input."""
        _, model, data = linear_iv
        with pytest.raises(RefinementError):
            build_operators(model, data, np.array([np.nan, 0.0]), M_MB=1, B_g=8)

    def test_phi_subsample(self, linear_iv):
        """Test that Phi falls back to a row subsample above the cap."""
        design, model, data = linear_iv
        ops = build_operators(model, data, design.theta, M_MB=10, B_g=8, seed=2, phi_max_rows=1000)
        assert ops.Phi.shape == (model.d_g, model.d)
        full = full_sample_jacobian(model, data, design.theta)
        assert not np.array_equal(ops.Phi, full)


class TestRefinementStep:
    """Test one preconditioned update."""

    def test_rate_continues_first_stage(self, linear_iv):
        """Test that the first refined step uses gamma0 (N + 1)^-a."""
        design, model, data = linear_iv
        N = 400
        ops = build_operators(model, data, design.theta, M_MB=1, B_g=8, N=N, mode="fullsample")
        lr = LearningRate(0.2, a=0.6)
        theta = np.array([0.5, 0.0])
        state = IterationState.initial(theta, np.random.default_rng(0), t=N)
        batch = MiniBatchPair(np.arange(10), np.arange(10, 30))

        step_second_order(state, model, data, lr.with_offset(N), ops, batch)

        G = model.mean_jacobian(data.rows(batch.jacobian_indices), theta)
        g = model.mean_moments(data.rows(batch.moment_indices), theta)
        expected = theta - 0.2 * (N + 1) ** -0.6 * ops.precond @ G.T @ ops.W @ g
        np.testing.assert_allclose(state.theta, expected, rtol=1e-12)
        assert state.t == N + 1
        np.testing.assert_array_equal(state.theta_bar, state.theta)


class TestRunRefinement:
    """Test the refined stage end to end."""

    def test_requires_t_above_n(self, linear_iv):
        """Test T <= N."""
        design, model, data = linear_iv
        ops = build_operators(model, data, design.theta, M_MB=1, B_g=8, N=100, mode="fullsample")
        with pytest.raises(RefinementError):
            run_refinement(model, data, design.theta, ops, LearningRate(0.1), BatchSchedule(8, 8), T=100)

    def test_approaches_efficient_gmm(self, linear_iv):
        """Test that the refined average approaches two-step efficient GMM."""
        design, model, data = linear_iv
        gamma0 = select_gamma0(model, data, design.theta, WarmStartConfig(B_ws=100), B_main=32, seed=0)
        lr = LearningRate(gamma0, a=0.501)
        N, T = 5000, 30000
        first = run_first_order(model, data, lr, BatchSchedule(32, 32), np.zeros(model.d), N, seed=1)
        ops = build_operators(model, data, first.theta_bar, M_MB=500, B_g=32, N=N, seed=2)
        refined = run_refinement(
            model, data, first.theta, ops, lr.with_offset(N),
            BatchSchedule(32, 32, "logarithmic", start=N), T, seed=3,
        )
        oracle = two_step_efficient_gmm(model, data)
        np.testing.assert_allclose(refined.theta_bar, oracle.theta_hat, atol=0.05)

    def test_observers_called_per_refined_step(self, linear_iv):
        """Test that observers see exactly T - N steps, numbered N+1..T."""
        design, model, data = linear_iv
        N, T = 40, 160
        ops = build_operators(model, data, design.theta, M_MB=50, B_g=16, N=N, seed=0)
        recorder = StepRecorder()
        bare = run_refinement(
            model, data, design.theta, ops, LearningRate(0.05).with_offset(N),
            BatchSchedule(16, 16, start=N), T, seed=5,
        )
        observed = run_refinement(
            model, data, design.theta, ops, LearningRate(0.05).with_offset(N),
            BatchSchedule(16, 16, start=N), T, hooks=[recorder], seed=5,
        )
        assert len(recorder.steps) == T - N
        assert recorder.steps == list(range(N + 1, T + 1))
        np.testing.assert_array_equal(bare.theta_bar, observed.theta_bar)

    def test_without_preconditioner(self, linear_iv):
        """Test that precondition=False changes the path."""
        design, model, data = linear_iv
        N = 50
        ops = build_operators(model, data, design.theta, M_MB=50, B_g=16, N=N, seed=0)
        lr = LearningRate(0.05).with_offset(N)
        schedule = BatchSchedule(16, 16, start=N)
        theta0 = np.zeros(model.d)
        with_pre = run_refinement(model, data, theta0, ops, lr, schedule, N + 200, seed=4)
        without = run_refinement(model, data, theta0, ops, lr, schedule, N + 200, seed=4, precondition=False)
        assert np.all(np.isfinite(without.theta_bar))
        assert not np.array_equal(with_pre.theta_bar, without.theta_bar)
        assert not np.allclose(with_pre.theta_bar, without.theta_bar)
