#!/usr/bin/env python3
"""
Unit tests for datasets and the linear IV moment model.
Tests immutability, CSV round trip, moment/Jacobian shapes and the generator.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent.parent))

import numpy as np
import pytest

from slim.model import (
    ConfigurationError,
    Dataset,
    LinearIvDesign,
    finite_difference_check,
    full_sample_jacobian,
    full_sample_moments,
    full_sample_outer,
    generate_linear_iv,
    model_from_linear_iv,
    ordinary_least_squares,
)


@pytest.fixture
def design():
    return LinearIvDesign()


@pytest.fixture
def data(design):
    return generate_linear_iv(design, 2000, seed=7)


class TestDataset:
    """Test the immutable dataset container."""

    def test_shape_and_default_columns(self):
        """Test n, width and generated column names."""
        ds = Dataset(np.ones((5, 3)))
        assert ds.n == 5
        assert ds.width == 3
        assert ds.columns == ("c0", "c1", "c2")

    def test_read_only(self):
        """Test that the stored array cannot be written."""
        ds = Dataset(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            ds.observations[0, 0] = 1.0

    def test_copy_on_construction(self):
        """Test that later changes to the source do not leak in."""
        source = np.zeros((2, 2))
        ds = Dataset(source)
        source[0, 0] = 5.0
        assert ds.observations[0, 0] == 0.0

    def test_rejects_non_finite(self):
        """Test NaN rejection."""
        with pytest.raises(ConfigurationError):
            Dataset(np.array([[1.0, np.nan]]))

    def test_rejects_column_mismatch(self):
        """Test column name count check."""
        with pytest.raises(ConfigurationError):
            Dataset(np.zeros((2, 2)), ("a",))

    def test_rows_and_column_index(self):
        """Test gathering rows and looking up columns."""
        ds = Dataset(np.arange(6.0).reshape(3, 2), ("a", "b"))
        np.testing.assert_array_equal(ds.rows(np.array([2, 0])), [[4.0, 5.0], [0.0, 1.0]])
        assert ds.column_index("b") == 1
        with pytest.raises(ConfigurationError):
            ds.column_index("z")

    def test_csv_round_trip(self, data, tmp_path):
        """Test that CSV output re-reads to identical values."""
        path = tmp_path / "data.csv"
        data.to_csv(str(path))
        loaded = Dataset.from_csv(str(path))
        assert loaded.columns == data.columns
        np.testing.assert_array_equal(loaded.observations, data.observations)


class TestLinearIvDesign:
    """Test design validation and derived matrices."""

    def test_defaults(self, design):
        """Test the default two-parameter, four-instrument design."""
        np.testing.assert_array_equal(design.theta, [1.0, -0.5])
        assert design.columns() == ("y", "x0", "x1", "q0", "q1", "q2", "q3")

    def test_first_stage_matrix(self, design):
        """Test the cyclic first-stage pattern."""
        pi = design.first_stage_matrix()
        assert pi.shape == (4, 2)
        np.testing.assert_array_equal(pi[:, 0], [1.0, 0.0, 1.0, 0.0])

    def test_toeplitz_covariance(self):
        """Test rho^|i-j| instrument covariance."""
        cov = LinearIvDesign(instrument_correlation=0.5).instrument_covariance()
        assert cov[0, 2] == pytest.approx(0.25)
        np.testing.assert_array_equal(np.diag(cov), np.ones(4))

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"d": 3, "d_g": 2, "theta_true": [0.0, 0.0, 0.0]},
            {"theta_true": [1.0]},
            {"instrument_correlation": 1.0},
            {"endogeneity": 1.0},
            {"error_scale": -1.0},
        ],
    )
    def test_invalid_designs(self, kwargs):
        """Test that invalid settings raise ConfigurationError."""
        with pytest.raises(ConfigurationError):
            LinearIvDesign(**kwargs)


class TestLinearIvModel:
    """Test moment and Jacobian evaluation."""

    def test_shapes(self, design, data):
        """Test batch output shapes."""
        model = model_from_linear_iv(design)
        block = data.rows(np.arange(10))
        assert model.moments(block, design.theta).shape == (10, 4)
        assert model.jacobian(block, design.theta).shape == (10, 4, 2)
        assert model.overidentified

    def test_single_record_helpers(self, design, data):
        """Test eval_g/eval_G against the batch forms."""
        model = model_from_linear_iv(design)
        record = data.observations[3]
        np.testing.assert_allclose(model.eval_g(record, design.theta), model.moments(record[None], design.theta)[0])
        np.testing.assert_allclose(model.eval_G(record, design.theta), model.jacobian(record[None], design.theta)[0])

    def test_mean_jacobian_matches_batch(self, design, data):
        """Test the closed-form mean Jacobian."""
        model = model_from_linear_iv(design)
        block = data.rows(np.arange(50))
        np.testing.assert_allclose(
            model.mean_jacobian(block, design.theta),
            model.jacobian(block, design.theta).mean(axis=0),
            atol=1e-12,
        )

    def test_moments_centered_at_truth(self, design):
        """Test that the population moments vanish at the true parameter."""
        model = model_from_linear_iv(design)
        big = generate_linear_iv(design, 200_000, seed=11)
        g_bar = full_sample_moments(model, big, design.theta)
        assert np.max(np.abs(g_bar)) < 0.02

    def test_finite_difference_check(self, design, data):
        """Test the analytic Jacobian against central differences."""
        model = model_from_linear_iv(design)
        assert finite_difference_check(model, data, n_points=20) <= 1e-5

    def test_instrument_weight(self, design, data):
        """Test that the 2SLS weight inverts n^-1 Q'Q."""
        model = model_from_linear_iv(design)
        _, _, q = model.split(data.observations)
        np.testing.assert_allclose(model.instrument_weight(data) @ (q.T @ q / data.n), np.eye(4), atol=1e-10)

    def test_full_sample_aggregates(self, design, data):
        """Test chunked full-sample means against direct computation."""
        model = model_from_linear_iv(design)
        theta = np.array([0.3, 0.1])
        g = model.moments(data.observations, theta)
        np.testing.assert_allclose(full_sample_moments(model, data, theta), g.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(full_sample_outer(model, data, theta), g.T @ g / data.n, atol=1e-10)
        np.testing.assert_allclose(
            full_sample_jacobian(model, data, theta),
            model.mean_jacobian(data.observations, theta),
            atol=1e-12,
        )

    def test_jacobian_subsample_rows(self, design, data):
        """Test the row-restricted Jacobian."""
        model = model_from_linear_iv(design)
        rows = np.arange(0, data.n, 2)
        np.testing.assert_allclose(
            full_sample_jacobian(model, data, design.theta, rows),
            model.mean_jacobian(data.rows(rows), design.theta),
            atol=1e-12,
        )


class TestGenerator:
    """Test the synthetic linear IV generator."""

    def test_deterministic_given_seed(self, design):
        """Test reproducibility."""
        a = generate_linear_iv(design, 100, seed=3)
        b = generate_linear_iv(design, 100, seed=3)
        np.testing.assert_array_equal(a.observations, b.observations)

    def test_endogeneity_biases_ols(self, design):
        """Test that OLS is biased while the design is endogenous."""
        big = generate_linear_iv(design, 50_000, seed=5)
        ols = ordinary_least_squares(big, design.d)
        assert abs(ols[0] - design.theta[0]) > 0.05

    def test_invalid_instrument_breaks_moments(self):
        """Test that contamination shifts the last moment."""
        design = LinearIvDesign(invalid_instrument=0.5)
        model = model_from_linear_iv(design)
        big = generate_linear_iv(design, 100_000, seed=9)
        g_bar = full_sample_moments(model, big, design.theta)
        assert g_bar[-1] == pytest.approx(0.5, abs=0.03)

    def test_rejects_empty_sample(self, design):
        """Test n >= 1."""
        with pytest.raises(ConfigurationError):
            generate_linear_iv(design, 0)
