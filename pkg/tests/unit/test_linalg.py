#!/usr/bin/env python3
"""
Unit tests for symmetric linear algebra helpers.
Tests pseudo-inverse, square root, spectral norm and block masks.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent.parent))

import numpy as np
import pytest

from slim.linalg import (
    block_diagonal_mask,
    condition_number_sym,
    pinv_sym,
    spectral_norm_psd,
    sym_sqrt,
    symmetrize,
)


@pytest.fixture
def psd_rank3():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 3))
    return X @ X.T


class TestPseudoInverse:
    """Test the eigendecomposition pseudo-inverse."""

    def test_full_rank_matches_inverse(self):
        """Test that a well-conditioned matrix is inverted exactly."""
        A = np.array([[4.0, 1.0], [1.0, 3.0]])
        inv, rank = pinv_sym(A)
        assert rank == 2
        np.testing.assert_allclose(inv, np.linalg.inv(A), atol=1e-12)

    def test_rank_deficient_identities(self, psd_rank3):
        """Test the Moore-Penrose identities on a rank-3 matrix."""
        inv, rank = pinv_sym(psd_rank3)
        assert rank == 3
        np.testing.assert_allclose(psd_rank3 @ inv @ psd_rank3, psd_rank3, atol=1e-9)
        np.testing.assert_allclose(inv @ psd_rank3 @ inv, inv, atol=1e-9)

    def test_zero_matrix(self):
        """Test that the zero matrix has rank 0 and zero pseudo-inverse."""
        inv, rank = pinv_sym(np.zeros((3, 3)))
        assert rank == 0
        assert np.all(inv == 0.0)

    def test_result_is_symmetric(self, psd_rank3):
        """Test symmetry of the output."""
        inv, _ = pinv_sym(psd_rank3)
        np.testing.assert_array_equal(inv, inv.T)


class TestSquareRoot:
    """Test the symmetric square root."""

    def test_square_recovers_matrix(self):
        """Test R R = A for a positive definite A."""
        A = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 3.0]])
        root = sym_sqrt(A)
        np.testing.assert_allclose(root @ root, A, atol=1e-12)
        np.testing.assert_allclose(root, root.T)

    def test_negative_eigenvalues_floored(self):
        """Test that tiny negative eigenvalues do not produce NaN."""
        A = np.diag([1.0, -1e-16])
        assert np.all(np.isfinite(sym_sqrt(A)))


class TestSpectralNorm:
    """Test power iteration for PSD matrices."""

    def test_matches_eigvalsh(self, psd_rank3):
        """Test agreement with the largest eigenvalue."""
        expected = np.linalg.eigvalsh(psd_rank3)[-1]
        assert spectral_norm_psd(psd_rank3) == pytest.approx(expected, rel=1e-6)

    def test_zero_matrix(self):
        """Test that the zero matrix has norm zero."""
        assert spectral_norm_psd(np.zeros((4, 4))) == 0.0

    def test_diagonal(self):
        """Test a diagonal matrix."""
        assert spectral_norm_psd(np.diag([1.0, 5.0, 2.0])) == pytest.approx(5.0, rel=1e-8)


class TestHelpers:
    """Test symmetrize, condition number and block masks."""

    def test_symmetrize(self):
        """Test (A + A') / 2."""
        A = np.array([[1.0, 2.0], [0.0, 1.0]])
        np.testing.assert_array_equal(symmetrize(A), [[1.0, 1.0], [1.0, 1.0]])

    def test_condition_number(self):
        """Test the eigenvalue ratio and the singular case."""
        assert condition_number_sym(np.diag([2.0, 8.0])) == pytest.approx(4.0)
        assert condition_number_sym(np.diag([0.0, 1.0])) == float("inf")

    def test_block_mask(self):
        """Test that only diagonal blocks are kept."""
        mask = block_diagonal_mask(2, 3)
        assert mask.shape == (6, 6)
        assert mask[:3, :3].all() and mask[3:, 3:].all()
        assert not mask[:3, 3:].any() and not mask[3:, :3].any()
