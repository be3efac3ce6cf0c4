#!/usr/bin/env python3
"""
SLIM Linear Algebra Helpers
Symmetric eigendecomposition based pseudo-inverse, matrix square root,
spectral norm and block masks shared by the estimation stages.
"""

import logging
from typing import Tuple

import numpy as np

logger = logging.getLogger(__name__)

PINV_RTOL = 1e-10  # eigenvalues below rtol * lambda_max are truncated
SQRT_FLOOR = 1e-12
POWER_TOL = 1e-10
POWER_MAX_ITER = 500
CONDITION_WARN = 1e12


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return (A + A') / 2."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def pinv_sym(a: np.ndarray, rtol: float = PINV_RTOL) -> Tuple[np.ndarray, int]:
    """
    Moore-Penrose pseudo-inverse of a symmetric matrix.

    Args:
        a: Symmetric (PSD in all callers) matrix
        rtol: Relative eigenvalue truncation threshold

    Returns:
        Tuple of (pseudo-inverse, achieved rank)
    """
    a = symmetrize(a)
    eigvals, eigvecs = np.linalg.eigh(a)
    lam_max = float(np.max(np.abs(eigvals))) if eigvals.size else 0.0
    if lam_max == 0.0:
        return np.zeros_like(a), 0

    keep = eigvals > rtol * lam_max
    rank = int(np.count_nonzero(keep))
    vecs = eigvecs[:, keep]
    inv = (vecs / eigvals[keep]) @ vecs.T
    return symmetrize(inv), rank


def sym_sqrt(a: np.ndarray, floor: float = SQRT_FLOOR) -> np.ndarray:
    """
    Symmetric square root of a PSD matrix via eigendecomposition.

    Eigenvalues are floored at `floor` before taking roots.
    """
    a = symmetrize(a)
    eigvals, eigvecs = np.linalg.eigh(a)
    root = np.sqrt(np.maximum(eigvals, floor))
    return symmetrize((eigvecs * root) @ eigvecs.T)


def spectral_norm_psd(
    a: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER
) -> float:
    """
    Largest eigenvalue of a symmetric PSD matrix.

    Power iteration with relative convergence tolerance `tol`; falls back to a
    full symmetric eigendecomposition when the iteration does not converge.
    """
    a = symmetrize(a)
    dim = a.shape[0]
    if dim == 0:
        return 0.0

    v = np.linspace(1.0, 2.0, dim)
    v /= np.linalg.norm(v)
    estimate = 0.0

    for _ in range(max_iter):
        w = a @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            break
        new_estimate = float(v @ w)
        v = w / norm_w
        if new_estimate > 0 and abs(new_estimate - estimate) <= tol * new_estimate:
            return new_estimate
        estimate = new_estimate

    logger.debug("Power iteration did not converge, using eigvalsh")
    return float(max(np.linalg.eigvalsh(a)[-1], 0.0))


def condition_number_sym(a: np.ndarray) -> float:
    """Ratio of largest to smallest absolute eigenvalue (inf when singular)."""
    eigvals = np.abs(np.linalg.eigvalsh(symmetrize(a)))
    smallest = float(eigvals.min())
    if smallest == 0.0:
        return float("inf")
    return float(eigvals.max()) / smallest


def block_diagonal_mask(n_blocks: int, block_size: int) -> np.ndarray:
    """Boolean mask keeping the diagonal blocks of an (n_blocks*block_size) square matrix."""
    return np.kron(np.eye(n_blocks), np.ones((block_size, block_size))).astype(bool)
