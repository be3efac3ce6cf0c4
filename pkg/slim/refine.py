#!/usr/bin/env python3
"""
SLIM Second-Order Refinement
One-time construction of the Jacobian Phi_n and weight W_MB at the first-stage
average, then preconditioned updates

    theta_t = theta_{t-1} - gamma_t (Phi' W Phi)^+ G~_t' W g~_t

with a growing Jacobian batch and an average restarted at t = N + 1.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from slim.engine import (
    DivergenceError,
    IterationObserver,
    IterationState,
    MiniBatchPair,
    RunResult,
    TraceRecorder,
    accept_step,
    batch_means,
    draw_minibatch,
    notify,
)
from slim.linalg import block_diagonal_mask, pinv_sym
from slim.model import Dataset, MomentModel, full_sample_jacobian, full_sample_outer
from slim.schedule import BatchSchedule, LearningRate

logger = logging.getLogger(__name__)

DEFAULT_PHI_MAX_ROWS = 1_000_000
WEIGHT_CHUNK_ROWS = 200_000


class RefinementError(Exception):
    """Raised when refinement operators cannot be built or applied."""

    pass


@dataclass
class RefinementOperators:
    """Fixed Phi_n, weight W and preconditioner (Phi' W Phi)^+."""

    Phi: np.ndarray
    W: np.ndarray
    precond: np.ndarray
    N: int
    M_MB: int
    mode: str = "minibatch"
    rank: int = 0
    warnings: List[str] = field(default_factory=list)

    @property
    def full_rank(self) -> bool:
        return self.rank == self.Phi.shape[1]

    def direction(self, G: np.ndarray, g: np.ndarray, precondition: bool = True) -> np.ndarray:
        """(Phi' W Phi)^+ G' W g, or G' W g without the preconditioner."""
        step = G.T @ (self.W @ g)
        if precondition:
            step = self.precond @ step
        return step


def minibatch_second_moment(
    model: MomentModel,
    data: Dataset,
    theta: np.ndarray,
    M_MB: int,
    B_g: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """(B_g / M) sum_l g~_l g~_l' over M fresh uniform batches of size B_g."""
    S = np.zeros((model.d_g, model.d_g))
    per_chunk = max(1, WEIGHT_CHUNK_ROWS // B_g)
    done = 0
    while done < M_MB:
        count = min(per_chunk, M_MB - done)
        idx = rng.integers(data.n, size=(count, B_g))
        g = model.moments(data.rows(idx.reshape(-1)), theta)
        g_tilde = g.reshape(count, B_g, model.d_g).mean(axis=1)
        S += g_tilde.T @ g_tilde
        done += count
    return (B_g / M_MB) * S


def build_operators(
    model: MomentModel,
    data: Dataset,
    theta_bar_N: np.ndarray,
    M_MB: int,
    B_g: int,
    N: int = 0,
    mode: str = "minibatch",
    structure: Optional[str] = None,
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    phi_max_rows: int = DEFAULT_PHI_MAX_ROWS,
) -> RefinementOperators:
    """
    Compute Phi_n, W and the preconditioner once at the first-stage average.

    Args:
        mode: "minibatch" (W_MB from M_MB batches) or "fullsample" ((n^-1 sum gg')^+)
        structure: "kronecker-diagonal" zeroes cross-equation blocks before inversion
        phi_max_rows: Phi_n uses a random subsample above this many rows

    Raises:
        RefinementError: Non-finite input, invalid mode or an all-zero weight
    """
    theta = np.asarray(theta_bar_N, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise RefinementError("First-stage average is not finite")
    if mode not in ("minibatch", "fullsample"):
        raise RefinementError(f"Unknown weight mode: {mode}")
    if structure not in (None, "none", "kronecker-diagonal"):
        raise RefinementError(f"Unknown weight structure: {structure}")
    if mode == "minibatch" and M_MB < 1:
        raise RefinementError(f"Mini-batch weight needs M_MB >= 1, got {M_MB}")
    if rng is None:
        rng = np.random.default_rng(seed)

    rows = None
    if data.n > phi_max_rows:
        rows = np.sort(rng.choice(data.n, size=phi_max_rows, replace=False))
        logger.info(f"Phi_n from a subsample of {phi_max_rows} rows")
    Phi = full_sample_jacobian(model, data, theta, rows)

    if mode == "minibatch":
        S = minibatch_second_moment(model, data, theta, M_MB, B_g, rng)
    else:
        S = full_sample_outer(model, data, theta)

    if structure == "kronecker-diagonal":
        size = model.d_g // model.n_equations
        S = np.where(block_diagonal_mask(model.n_equations, size), S, 0.0)

    W, rank_w = pinv_sym(S)
    if rank_w == 0:
        raise RefinementError("Moment second-moment matrix is zero; weight undefined")

    precond, rank = pinv_sym(Phi.T @ W @ Phi)
    notes = []
    if rank < model.d:
        message = f"Phi'W Phi has rank {rank} < d={model.d}; using the pseudo-inverse"
        logger.warning(message)
        notes.append(message)

    logger.info(f"Refinement operators built ({mode}, rank {rank}/{model.d})")
    return RefinementOperators(
        Phi=Phi,
        W=W,
        precond=precond,
        N=N,
        M_MB=M_MB if mode == "minibatch" else 0,
        mode=mode,
        rank=rank,
        warnings=notes,
    )


def step_second_order(
    state: IterationState,
    model: MomentModel,
    data: Dataset,
    lr: LearningRate,
    ops: RefinementOperators,
    batch: MiniBatchPair,
    precondition: bool = True,
) -> IterationState:
    """
    One refinement update; the rate is evaluated at the local index t - N.

    Raises:
        DivergenceError: On non-finite or exploding iterates
    """
    G, g = batch_means(model, data, state.theta, batch)
    gamma = lr.rate(state.t + 1 - state.start)
    return accept_step(state, state.theta - gamma * ops.direction(G, g, precondition), g)


def run_refinement(
    model: MomentModel,
    data: Dataset,
    theta_N: np.ndarray,
    ops: RefinementOperators,
    lr: LearningRate,
    schedule: BatchSchedule,
    T: int,
    hooks: Sequence[IterationObserver] = (),
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    precondition: bool = True,
    trace: Optional[TraceRecorder] = None,
) -> RunResult:
    """
    Run iterations t = N+1 .. T from the first-stage iterate.

    `lr` should carry n_star = N so the step size continues the first-stage
    decay; `schedule` should start at N for logarithmic Jacobian growth.
    precondition=False drops (Phi' W Phi)^+ and runs first-order updates with
    the refined weight.

    Returns:
        RunResult(theta_T, theta_bar_T, trace) with theta_bar averaged over N+1..T
    """
    N = ops.N
    if T <= N:
        raise RefinementError(f"Refinement needs T > N, got T={T}, N={N}")
    if rng is None:
        rng = np.random.default_rng(seed)

    observers = list(hooks) + ([trace] if trace is not None else [])
    state = IterationState.initial(theta_N, rng, t=N)

    try:
        for t in range(N + 1, T + 1):
            batch = draw_minibatch(
                state, data.n, schedule.jacobian_batch(t), schedule.moment_batch(t)
            )
            step_second_order(state, model, data, lr, ops, batch, precondition)
            notify(observers, state)
    except DivergenceError as e:
        e.trace = trace
        logger.error(f"Refinement stage diverged: {e}")
        raise

    return RunResult(state.theta, state.theta_bar, trace)
