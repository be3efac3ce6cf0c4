#!/usr/bin/env python3
"""
SLIM Schedules
Learning-rate and mini-batch-size schedules, warm-start settings and the
rule-of-thumb choice of the initial learning rate.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from slim.linalg import spectral_norm_psd
from slim.model import Dataset, MomentModel

logger = logging.getLogger(__name__)

DEFAULT_BATCH_INDEX_LIMIT = 10000


class ScheduleError(Exception):
    """Base exception for schedule errors."""

    pass


class TuningError(ScheduleError):
    """Raised when the initial learning rate cannot be selected."""

    pass


@dataclass(frozen=True)
class LearningRate:
    """gamma_t = gamma0 * max(t + n_star, 1)^(-a), with a in (1/2, 1)."""

    gamma0: float
    a: float = 0.501
    n_star: int = 0

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ScheduleError(f"gamma0 must be positive, got {self.gamma0}")
        if not 0.5 < self.a < 1.0:
            raise ScheduleError(f"Rate exponent must lie in (0.5, 1), got {self.a}")
        if self.n_star < 0:
            raise ScheduleError(f"Offset must be nonnegative, got {self.n_star}")

    def rate(self, t: int) -> float:
        """Step size at iteration t."""
        return rate_at(self, t)

    def with_offset(self, n_star: int) -> "LearningRate":
        """Same schedule continued after n_star iterations."""
        return LearningRate(self.gamma0, self.a, n_star)


def rate_at(lr: LearningRate, t: int) -> float:
    """
    Step size gamma0 * max(t + n_star, 1)^(-a).

    Args:
        lr: Learning-rate schedule
        t: Iteration index (>= 1)
    """
    if t < 1:
        raise ScheduleError(f"Iteration index must be >= 1, got {t}")
    return lr.gamma0 * float(max(t + lr.n_star, 1)) ** (-lr.a)


@dataclass(frozen=True)
class BatchSchedule:
    """
    Moment batch B_g and Jacobian batch B_{G,t}.

    Logarithmic growth adds floor(ln(t - start)) after the stage start.
    """

    B_g: int
    B_G0: int
    growth: str = "constant"
    start: int = 0

    def __post_init__(self):
        if self.B_g < 1 or self.B_G0 < 1:
            raise ScheduleError(f"Batch sizes must be positive, got B_g={self.B_g}, B_G0={self.B_G0}")
        if self.growth not in ("constant", "logarithmic"):
            raise ScheduleError(f"Unknown batch growth: {self.growth}")
        if self.start < 0:
            raise ScheduleError(f"Stage start must be nonnegative, got {self.start}")

    def jacobian_batch(self, t: int) -> int:
        """B_{G,t}."""
        if self.growth == "constant" or t <= self.start:
            return self.B_G0
        return self.B_G0 + int(math.floor(math.log(t - self.start)))

    def moment_batch(self, t: int) -> int:
        """B_g (held constant)."""
        return self.B_g


@dataclass(frozen=True)
class WarmStartConfig:
    """Nested-loop warm start: block size, epochs, epoch-rate base and exponent."""

    B_ws: int = 512
    E_ws: int = 1
    gamma0_ws: float = 0.1
    a: float = 0.501

    def __post_init__(self):
        if self.B_ws < 1 or self.E_ws < 1:
            raise ScheduleError(f"Warm start needs positive B_ws and E_ws, got {self.B_ws}, {self.E_ws}")
        if not self.gamma0_ws > 0:
            raise ScheduleError(f"gamma0_ws must be positive, got {self.gamma0_ws}")
        if not 0.5 < self.a < 1.0:
            raise ScheduleError(f"Rate exponent must lie in (0.5, 1), got {self.a}")

    def rate(self, epoch: int) -> float:
        """gamma_e = gamma0_ws * e^(-a), epochs counted from 1."""
        return self.gamma0_ws * float(epoch) ** (-self.a)

    def blocks(self, n: int) -> int:
        """Number of disjoint blocks floor(n / B_ws)."""
        return n // self.B_ws

    def total_updates(self, n: int) -> int:
        """K (K - 1) E_ws updates for K blocks."""
        k = self.blocks(n)
        return k * (k - 1) * self.E_ws

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "WarmStartConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ScheduleError(f"Unknown warm-start keys: {sorted(unknown)}")
        return cls(**data)


def lower_median(values: np.ndarray) -> float:
    """Order statistic at position (len - 1) // 2 of the sorted values."""
    ordered = np.sort(np.asarray(values, dtype=float))
    return float(ordered[(len(ordered) - 1) // 2])


def jacobian_norms(
    model: MomentModel,
    data: Dataset,
    theta: np.ndarray,
    B_ws: int,
    limit: int = DEFAULT_BATCH_INDEX_LIMIT,
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    weight_root: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Spectral norms of G~'G~ over a random partition into floor(n / B_ws) blocks.

    At most `limit` blocks are evaluated; a random subset is drawn otherwise.
    """
    n_blocks = data.n // B_ws
    if n_blocks < 1:
        raise TuningError(f"No complete batch of size {B_ws} in a sample of {data.n}")
    if rng is None:
        rng = np.random.default_rng(seed)

    perm = rng.permutation(data.n)[: n_blocks * B_ws].reshape(n_blocks, B_ws)
    if n_blocks > limit:
        perm = perm[np.sort(rng.choice(n_blocks, size=limit, replace=False))]

    norms = np.empty(perm.shape[0])
    for i, block in enumerate(perm):
        G = model.mean_jacobian(data.rows(block), theta)
        if weight_root is not None:
            G = weight_root @ G
        norms[i] = spectral_norm_psd(G.T @ G)
    return norms


def select_gamma0(
    model: MomentModel,
    data: Dataset,
    theta_ws: np.ndarray,
    cfg: WarmStartConfig,
    B_main: int,
    s0: float = 5.0,
    batch_index_set_limit: int = DEFAULT_BATCH_INDEX_LIMIT,
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    weight_root: Optional[np.ndarray] = None,
) -> float:
    """
    gamma0 = B_main / (s0 * Psi0 * B_ws).

    Psi0 is the lower median of ||G~'G~||_2 over warm-start sized batches at
    the warm-start estimate.

    Raises:
        TuningError: All Jacobians vanish (Psi0 = 0) or theta is not finite
    """
    theta_ws = np.asarray(theta_ws, dtype=float)
    if not np.all(np.isfinite(theta_ws)):
        raise TuningError("Warm-start estimate is not finite")
    if s0 <= 0 or B_main < 1:
        raise TuningError(f"Invalid tuning constants s0={s0}, B_main={B_main}")

    norms = jacobian_norms(
        model, data, theta_ws, cfg.B_ws, batch_index_set_limit, seed, rng, weight_root
    )
    psi0 = lower_median(norms)
    if psi0 <= 0.0:
        raise TuningError("Median Jacobian norm is zero; cannot scale the learning rate")

    gamma0 = B_main / (s0 * psi0 * cfg.B_ws)
    logger.info(f"Selected gamma0={gamma0:.6g} (Psi0={psi0:.6g}, {len(norms)} batches)")
    return gamma0
