#!/usr/bin/env python3
"""
SLIM Moment Models
Dataset container, the moment-model abstraction and the linear
instrumental-variables design used as an oracle-friendly benchmark.

Record layout:
    Each observation is a flat numeric row; the model knows which columns hold
    which variables through the dataset's column names.

Linear IV record:
    [y, x_1 .. x_d, q_1 .. q_dg]
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FD_STEP = 1e-6


class ModelError(Exception):
    """Base exception for model errors."""

    pass


class ConfigurationError(ModelError):
    """Raised when a design or model configuration is invalid."""

    pass


class GenerationError(ModelError):
    """Raised when synthetic data cannot be generated."""

    pass


@dataclass(frozen=True)
class Dataset:
    """
    Immutable sample z_1..z_n stored as an (n, width) matrix.
    """

    observations: np.ndarray
    columns: Tuple[str, ...] = ()

    def __post_init__(self):
        obs = np.array(self.observations, dtype=float, copy=True)
        if obs.ndim != 2:
            raise ConfigurationError(f"Observations must be a matrix, got ndim={obs.ndim}")
        if obs.shape[0] < 1:
            raise ConfigurationError("Dataset needs at least one observation")
        if not np.all(np.isfinite(obs)):
            raise ConfigurationError("Dataset contains non-finite entries")

        columns = tuple(self.columns) or tuple(f"c{k}" for k in range(obs.shape[1]))
        if len(columns) != obs.shape[1]:
            raise ConfigurationError(
                f"{len(columns)} column names for {obs.shape[1]} columns"
            )

        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "columns", columns)

    @property
    def n(self) -> int:
        """Number of observations."""
        return self.observations.shape[0]

    @property
    def width(self) -> int:
        """Number of columns per record."""
        return self.observations.shape[1]

    def rows(self, indices: np.ndarray) -> np.ndarray:
        """Gather records by (0-based) index."""
        return self.observations[indices]

    def column_index(self, name: str) -> int:
        """Position of a named column."""
        try:
            return self.columns.index(name)
        except ValueError:
            raise ConfigurationError(f"Unknown column: {name}") from None

    def to_csv(self, path: str) -> None:
        """Write the dataset with a header row naming each column."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(self.observations, columns=list(self.columns)).to_csv(path, index=False)
        logger.info(f"Wrote dataset ({self.n} rows) to {path}")

    @classmethod
    def from_csv(cls, path: str) -> "Dataset":
        """Read a dataset written by `to_csv`."""
        frame = pd.read_csv(path, float_precision="round_trip")
        return cls(frame.to_numpy(dtype=float), tuple(frame.columns))


class MomentModel(ABC):
    """
    Moment function g(z, theta) with analytic Jacobian G(z, theta).

    Subclasses implement batch evaluation over a block of records; evaluation
    is pure, so a model may be shared across workers.
    """

    def __init__(self, d: int, d_g: int, n_equations: int = 1):
        if d < 1 or d_g < 1:
            raise ConfigurationError(f"Invalid dimensions d={d}, d_g={d_g}")
        if d_g < d:
            raise ConfigurationError(f"Underidentified model: d_g={d_g} < d={d}")
        if d_g % n_equations != 0:
            raise ConfigurationError(
                f"d_g={d_g} is not divisible into {n_equations} equation blocks"
            )
        self.d = d
        self.d_g = d_g
        self.n_equations = n_equations

    @property
    def param_names(self) -> List[str]:
        """Readable parameter names (theta_0, theta_1, ... by default)."""
        return [f"theta_{k}" for k in range(self.d)]

    @property
    def overidentified(self) -> bool:
        """True when d_g > d."""
        return self.d_g > self.d

    @abstractmethod
    def moments(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """
        Evaluate g for a block of records.

        Args:
            records: (B, width) records
            theta: (d,) parameter

        Returns:
            (B, d_g) moment contributions
        """
        pass

    @abstractmethod
    def jacobian(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """
        Evaluate G for a block of records.

        Returns:
            (B, d_g, d) Jacobian contributions
        """
        pass

    def eval_g(self, record: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """g(z, theta) for a single record."""
        return self.moments(np.atleast_2d(record), theta)[0]

    def eval_G(self, record: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """G(z, theta) for a single record."""
        return self.jacobian(np.atleast_2d(record), theta)[0]

    def mean_moments(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Batch mean of g."""
        return self.moments(records, theta).mean(axis=0)

    def mean_jacobian(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Batch mean of G."""
        return self.jacobian(records, theta).mean(axis=0)

    def moment_outer(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Batch mean of g g'."""
        g = self.moments(records, theta)
        return g.T @ g / g.shape[0]

    def instrument_weight(self, data: Dataset) -> np.ndarray:
        """Fixed first-stage weighting matrix (identity unless overridden)."""
        return np.eye(self.d_g)

    def jacobian_error(
        self, records: np.ndarray, theta: np.ndarray, step: float = FD_STEP
    ) -> float:
        """
        Largest scaled gap between the analytic Jacobian and central differences.

        Each entry is compared as |G - G_fd| / (1 + |G|).
        """
        records = np.atleast_2d(records)
        theta = np.asarray(theta, dtype=float)
        analytic = self.jacobian(records, theta)
        numeric = np.empty_like(analytic)

        for k in range(self.d):
            bump = np.zeros(self.d)
            bump[k] = step
            upper = self.moments(records, theta + bump)
            lower = self.moments(records, theta - bump)
            numeric[:, :, k] = (upper - lower) / (2.0 * step)

        return float(np.max(np.abs(analytic - numeric) / (1.0 + np.abs(analytic))))


@dataclass
class LinearIvDesign:
    """
    Linear IV design y = x'theta + u, x = Pi'q + v.

    Instruments q ~ N(0, Toeplitz(instrument_correlation)); Pi[i, k] equals
    first_stage for i = k (mod d); u = error_scale * (endogeneity * v_1 +
    sqrt(1 - endogeneity^2) * e) + invalid_instrument * q_dg.
    """

    d: int = 2
    d_g: int = 4
    theta_true: List[float] = field(default_factory=lambda: [1.0, -0.5])
    first_stage: float = 1.0
    instrument_correlation: float = 0.0
    error_scale: float = 1.0
    endogeneity: float = 0.5
    invalid_instrument: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Check dimensions and covariance parameters."""
        if self.d < 1 or self.d_g < self.d:
            raise ConfigurationError(
                f"Linear IV needs 1 <= d <= d_g, got d={self.d}, d_g={self.d_g}"
            )
        if len(self.theta_true) != self.d:
            raise ConfigurationError(
                f"theta_true has length {len(self.theta_true)}, expected {self.d}"
            )
        if not -1.0 < self.instrument_correlation < 1.0:
            raise ConfigurationError("instrument_correlation must lie in (-1, 1)")
        if self.error_scale < 0:
            raise ConfigurationError("error_scale must be nonnegative")
        if not 0.0 <= abs(self.endogeneity) < 1.0:
            raise ConfigurationError("endogeneity must lie in (-1, 1)")

    @property
    def theta(self) -> np.ndarray:
        """True coefficient vector."""
        return np.asarray(self.theta_true, dtype=float)

    def instrument_covariance(self) -> np.ndarray:
        """Toeplitz covariance rho^|i-j| of the instruments."""
        idx = np.arange(self.d_g)
        return self.instrument_correlation ** np.abs(idx[:, None] - idx[None, :])

    def first_stage_matrix(self) -> np.ndarray:
        """(d_g, d) first-stage coefficients."""
        pi = np.zeros((self.d_g, self.d))
        for i in range(self.d_g):
            pi[i, i % self.d] = self.first_stage
        return pi

    def columns(self) -> Tuple[str, ...]:
        """Record schema."""
        return (
            ("y",)
            + tuple(f"x{k}" for k in range(self.d))
            + tuple(f"q{k}" for k in range(self.d_g))
        )


class LinearIvModel(MomentModel):
    """
    g(z, theta) = q (y - x'theta), G(z, theta) = -q x' (constant in theta).
    """

    def __init__(self, design: LinearIvDesign):
        super().__init__(design.d, design.d_g)
        self.design = design
        self._y = 0
        self._x = slice(1, 1 + design.d)
        self._q = slice(1 + design.d, 1 + design.d + design.d_g)

    @property
    def param_names(self) -> List[str]:
        return [f"theta_{k}" for k in range(self.d)]

    @property
    def affine(self) -> bool:
        """Moments are affine in theta."""
        return True

    def split(self, records: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (y, X, Q) blocks of a record block."""
        return records[:, self._y], records[:, self._x], records[:, self._q]

    def moments(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        y, x, q = self.split(records)
        return q * (y - x @ theta)[:, None]

    def jacobian(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        _, x, q = self.split(records)
        return -q[:, :, None] * x[:, None, :]

    def mean_jacobian(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        _, x, q = self.split(records)
        return -(q.T @ x) / records.shape[0]

    def instrument_weight(self, data: Dataset) -> np.ndarray:
        """2SLS weight (n^-1 sum q q')^-1."""
        _, _, q = self.split(data.observations)
        return np.linalg.inv(q.T @ q / data.n)


def model_from_linear_iv(design: LinearIvDesign) -> LinearIvModel:
    """
    Build the moment model of a linear IV design.

    Raises:
        ConfigurationError: On dimension mismatch
    """
    design.validate()
    return LinearIvModel(design)


def generate_linear_iv(
    design: LinearIvDesign, n: int, seed: Optional[int] = None, rng: Optional[np.random.Generator] = None
) -> Dataset:
    """
    Draw n records (y, x, q) from a linear IV design.

    Deterministic given `seed` (or the state of `rng`).
    """
    if n < 1:
        raise ConfigurationError(f"Sample size must be positive, got {n}")
    design.validate()
    if rng is None:
        rng = np.random.default_rng(seed)

    chol = np.linalg.cholesky(design.instrument_covariance())
    q = rng.standard_normal((n, design.d_g)) @ chol.T
    v = rng.standard_normal((n, design.d))
    e = rng.standard_normal(n)

    rho = design.endogeneity
    u = design.error_scale * (rho * v[:, 0] + np.sqrt(1.0 - rho**2) * e)
    u = u + design.invalid_instrument * q[:, -1]

    x = q @ design.first_stage_matrix() + v
    y = x @ design.theta + u

    return Dataset(np.column_stack([y, x, q]), design.columns())


def ordinary_least_squares(data: Dataset, d: int) -> np.ndarray:
    """OLS of y on x for a linear IV record layout (comparison only)."""
    y = data.observations[:, 0]
    x = data.observations[:, 1 : 1 + d]
    return np.linalg.lstsq(x, y, rcond=None)[0]


def finite_difference_check(
    model: MomentModel,
    data: Dataset,
    n_points: int = 20,
    scale: float = 0.5,
    center: Optional[Sequence[float]] = None,
    seed: int = 0,
) -> float:
    """
    Jacobian check at random (record, theta) pairs.

    Returns:
        Largest scaled entrywise error over all points
    """
    rng = np.random.default_rng(seed)
    base = np.zeros(model.d) if center is None else np.asarray(center, dtype=float)
    worst = 0.0
    for _ in range(n_points):
        record = data.observations[rng.integers(data.n)]
        theta = base + scale * rng.standard_normal(model.d)
        worst = max(worst, model.jacobian_error(record, theta))
    return worst


FULL_SAMPLE_CHUNK = 10000


def _chunks(n: int, size: int = FULL_SAMPLE_CHUNK):
    for lo in range(0, n, size):
        yield lo, min(lo + size, n)


def full_sample_moments(model: MomentModel, data: Dataset, theta: np.ndarray) -> np.ndarray:
    """g_bar_n(theta), accumulated over row chunks in a fixed order."""
    total = np.zeros(model.d_g)
    for lo, hi in _chunks(data.n):
        total += model.moments(data.observations[lo:hi], theta).sum(axis=0)
    return total / data.n


def full_sample_jacobian(
    model: MomentModel, data: Dataset, theta: np.ndarray, rows: Optional[np.ndarray] = None
) -> np.ndarray:
    """G_bar_n(theta), optionally over a subset of rows."""
    obs = data.observations if rows is None else data.observations[rows]
    total = np.zeros((model.d_g, model.d))
    for lo, hi in _chunks(obs.shape[0]):
        total += model.mean_jacobian(obs[lo:hi], theta) * (hi - lo)
    return total / obs.shape[0]


def full_sample_outer(model: MomentModel, data: Dataset, theta: np.ndarray) -> np.ndarray:
    """n^-1 sum g g' at theta."""
    total = np.zeros((model.d_g, model.d_g))
    for lo, hi in _chunks(data.n):
        g = model.moments(data.observations[lo:hi], theta)
        total += g.T @ g
    return total / data.n
