#!/usr/bin/env python3
"""
SLIM Iteration Engine
Mini-batch U-statistic updates with Polyak-Ruppert averaging, per-iteration
observers and the epoch-based warm start.

Update:
    theta_t = theta_{t-1} - gamma_t * G~_t(theta_{t-1})' g~_t(theta_{t-1})
where G~ and g~ are means over two disjoint index lists drawn uniformly with
replacement from the sample.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from slim.model import ConfigurationError, Dataset, MomentModel
from slim.schedule import BatchSchedule, LearningRate, WarmStartConfig

logger = logging.getLogger(__name__)

DIVERGENCE_BOUND = 1e8


class EngineError(Exception):
    """Base exception for iteration engine errors."""

    pass


class DivergenceError(EngineError):
    """Raised when an iterate becomes non-finite or exceeds the divergence bound."""

    def __init__(self, t: int, theta: np.ndarray, trace: Optional["TraceRecorder"] = None):
        self.t = t
        self.theta = np.array(theta, copy=True)
        self.trace = trace
        super().__init__(f"Iterate diverged at t={t} (max |theta| = {np.max(np.abs(theta)):.3e})")


@dataclass
class IterationState:
    """
    Current iterate, running average and sampling stream of one run.

    `start` is the iteration count at which the running average was
    started; the average covers iterations start+1 .. t.
    """

    theta: np.ndarray
    theta_bar: np.ndarray
    t: int
    rng: np.random.Generator
    start: int = 0
    g_tilde: Optional[np.ndarray] = None

    @classmethod
    def initial(
        cls, theta0: np.ndarray, rng: np.random.Generator, t: int = 0
    ) -> "IterationState":
        theta0 = np.array(theta0, dtype=float, copy=True)
        if not np.all(np.isfinite(theta0)):
            raise ConfigurationError("Starting value is not finite")
        return cls(theta=theta0, theta_bar=theta0.copy(), t=t, rng=rng, start=t)

    @property
    def averaged(self) -> int:
        """Iterations covered by the running average."""
        return self.t - self.start


class MiniBatchPair(NamedTuple):
    """Disjoint index lists for the Jacobian and moment batch means."""

    jacobian_indices: np.ndarray
    moment_indices: np.ndarray


class IterationObserver(ABC):
    """Read-only per-iteration hook."""

    @abstractmethod
    def observe(
        self, t: int, theta: np.ndarray, theta_bar: np.ndarray, g_tilde: np.ndarray
    ) -> None:
        """Called once after every accepted step."""
        pass


class TraceRecorder(IterationObserver):
    """Records theta_bar every `stride` iterations."""

    def __init__(self, stride: int = 100, names: Optional[Sequence[str]] = None):
        if stride < 1:
            raise ValueError(f"Trace stride must be positive, got {stride}")
        self.stride = stride
        self.names = list(names) if names is not None else None
        self.steps: List[int] = []
        self.values: List[np.ndarray] = []

    def observe(self, t, theta, theta_bar, g_tilde) -> None:
        if t % self.stride == 0:
            self.steps.append(t)
            self.values.append(np.array(theta_bar, copy=True))

    def to_frame(self) -> pd.DataFrame:
        """DataFrame with columns t, theta_bar_<k>."""
        width = len(self.values[0]) if self.values else len(self.names or [])
        names = self.names or [str(k) for k in range(width)]
        columns = [f"theta_bar_{name}" for name in names]
        frame = pd.DataFrame(
            np.array(self.values).reshape(len(self.values), width), columns=columns
        )
        frame.insert(0, "t", self.steps)
        return frame

    def to_csv(self, path: str) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        logger.info(f"Wrote trace ({len(self.steps)} rows) to {path}")


class RunResult(NamedTuple):
    """Final iterate, average and optional trace of a run."""

    theta: np.ndarray
    theta_bar: np.ndarray
    trace: Optional[TraceRecorder]


def draw_minibatch(state: IterationState, n: int, B_G: int, B_g: int) -> MiniBatchPair:
    """
    Draw B_G + B_g indices uniformly with replacement from 0..n-1.

    The first B_G positions form the Jacobian batch, the rest the moment batch.
    """
    if n < 1:
        raise ConfigurationError(f"Cannot sample from {n} observations")
    indices = state.rng.integers(n, size=B_G + B_g)
    return MiniBatchPair(indices[:B_G], indices[B_G:])


def check_finite(t: int, theta: np.ndarray, trace: Optional[TraceRecorder] = None) -> None:
    """Raise DivergenceError for non-finite or exploding iterates."""
    if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > DIVERGENCE_BOUND:
        raise DivergenceError(t, theta, trace)


def accept_step(state: IterationState, theta: np.ndarray, g_tilde: np.ndarray) -> IterationState:
    """Install an accepted iterate and update the running average."""
    t = state.t + 1
    check_finite(t, theta)
    k = t - state.start
    state.theta = theta
    state.theta_bar = ((k - 1) / k) * state.theta_bar + (1.0 / k) * theta
    state.t = t
    state.g_tilde = g_tilde
    return state


def batch_means(
    model: MomentModel,
    data: Dataset,
    theta: np.ndarray,
    batch: MiniBatchPair,
):
    """(G~, g~) at theta over the two index lists."""
    G = model.mean_jacobian(data.rows(batch.jacobian_indices), theta)
    g = model.mean_moments(data.rows(batch.moment_indices), theta)
    return G, g


def step_first_order(
    state: IterationState,
    model: MomentModel,
    data: Dataset,
    lr: LearningRate,
    batch: MiniBatchPair,
    weight_root: Optional[np.ndarray] = None,
) -> IterationState:
    """
    One first-order update.

    With `weight_root` the moments and Jacobian are pre-multiplied by a fixed
    symmetric root of the weighting matrix.

    Raises:
        DivergenceError: On non-finite or exploding iterates
    """
    G, g = batch_means(model, data, state.theta, batch)
    if weight_root is not None:
        direction = (weight_root @ G).T @ (weight_root @ g)
    else:
        direction = G.T @ g
    gamma = lr.rate(state.t + 1 - state.start)
    return accept_step(state, state.theta - gamma * direction, g)


def read_only(array: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if array is None:
        return None
    view = array.view()
    view.flags.writeable = False
    return view


def notify(hooks: Sequence[IterationObserver], state: IterationState) -> None:
    """Call every observer with read-only views of the current state."""
    if not hooks:
        return
    theta, theta_bar, g_tilde = read_only(state.theta), read_only(state.theta_bar), read_only(state.g_tilde)
    for hook in hooks:
        hook.observe(state.t, theta, theta_bar, g_tilde)


def run_first_order(
    model: MomentModel,
    data: Dataset,
    lr: LearningRate,
    schedule: BatchSchedule,
    theta0: np.ndarray,
    N: int,
    hooks: Sequence[IterationObserver] = (),
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    weight_root: Optional[np.ndarray] = None,
    trace: Optional[TraceRecorder] = None,
) -> RunResult:
    """
    Run N first-order steps from theta0.

    Args:
        hooks: Observers called after every step
        rng: Sampling stream (consumed in place); built from `seed` if absent
        trace: Optional recorder of theta_bar at a decimated grid

    Returns:
        RunResult(theta_N, theta_bar_N, trace)

    Raises:
        DivergenceError: Carries the partial trace
    """
    if N < 1:
        raise ConfigurationError(f"Iteration count must be positive, got {N}")
    if rng is None:
        rng = np.random.default_rng(seed)

    observers = list(hooks) + ([trace] if trace is not None else [])
    state = IterationState.initial(theta0, rng)

    try:
        for _ in range(N):
            t = state.t + 1
            batch = draw_minibatch(state, data.n, schedule.jacobian_batch(t), schedule.moment_batch(t))
            step_first_order(state, model, data, lr, batch, weight_root)
            notify(observers, state)
    except DivergenceError as e:
        e.trace = trace
        logger.error(f"First-order stage diverged: {e}")
        raise

    return RunResult(state.theta, state.theta_bar, trace)


def run_warm_start(
    model: MomentModel,
    data: Dataset,
    cfg: WarmStartConfig,
    theta0_ws: np.ndarray,
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    weight_root: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Epoch-reshuffled nested-loop warm start.

    Each epoch permutes the sample, cuts it into K = floor(n / B_ws) blocks
    and updates with G~_j' g~_k for every ordered pair j != k at the epoch
    rate. G~_j is recomputed at the current iterate for every pair.

    Returns:
        Average of all K (K - 1) E_ws updates

    Raises:
        ConfigurationError: n < 2 B_ws
        DivergenceError: On non-finite or exploding iterates
    """
    n_blocks = cfg.blocks(data.n)
    if n_blocks < 2:
        raise ConfigurationError(
            f"Warm start needs n >= 2 * B_ws, got n={data.n}, B_ws={cfg.B_ws}"
        )
    if rng is None:
        rng = np.random.default_rng(seed)

    theta = np.array(theta0_ws, dtype=float, copy=True)
    check_finite(0, theta)
    theta_bar = theta.copy()
    count = 0

    for epoch in range(1, cfg.E_ws + 1):
        gamma = cfg.rate(epoch)
        blocks = rng.permutation(data.n)[: n_blocks * cfg.B_ws].reshape(n_blocks, cfg.B_ws)
        for j in range(n_blocks):
            jac_rows = data.rows(blocks[j])
            for k in range(n_blocks):
                if k == j:
                    continue
                G = model.mean_jacobian(jac_rows, theta)
                g = model.mean_moments(data.rows(blocks[k]), theta)
                if weight_root is not None:
                    G = weight_root @ G
                    g = weight_root @ g
                theta = theta - gamma * (G.T @ g)
                count += 1
                check_finite(count, theta)
                theta_bar = theta_bar + (theta - theta_bar) / count

    logger.info(f"Warm start finished: {count} updates over {cfg.E_ws} epoch(s)")
    return theta_bar
