#!/usr/bin/env python3
"""
SLIM Random-Scaling Critical Values
Simulation of the pivotal limit W(1)'(int Wbar Wbar')^-1 W(1), Wbar(r) =
W(r) - r W(1), from discretized Wiener paths, plus the shipped lookup table.

For a single restriction the signed root W(1) / sqrt(int Wbar^2) is used and
the two-sided value is its 1 - alpha/2 quantile.
"""

import logging
from functools import lru_cache
from multiprocessing import Pool
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

DEFAULT_TABLE = Path(__file__).resolve().parent.parent / "data" / "rs_critical_values.csv"
CHUNK_ELEMENTS = 4_000_000
MIN_PATH_LENGTH = 1000
MIN_REPS = 10_000
TABLE_PATH_LENGTH = 2000
TABLE_REPS = 200_000
TABLE_SEED = 20240917
TABLE_ELLS = tuple(range(1, 11))
TABLE_ALPHAS = (0.05, 0.1)


class CriticalValueError(Exception):
    """Raised for invalid simulation settings or a malformed table."""

    pass


def _simulate_chunk(task: Tuple[int, int, int, np.random.SeedSequence]) -> np.ndarray:
    ell, path_length, count, seed_seq = task
    rng = np.random.Generator(np.random.Philox(seed_seq))

    steps = rng.standard_normal((count, path_length, ell)) / np.sqrt(path_length)
    W = np.cumsum(steps, axis=1)
    W1 = W[:, -1, :]
    r = np.arange(1, path_length + 1) / path_length
    W_bar = W - r[None, :, None] * W1[:, None, :]
    M = np.einsum("cki,ckj->cij", W_bar, W_bar) / path_length

    if ell == 1:
        return W1[:, 0] / np.sqrt(M[:, 0, 0])
    return np.einsum("ci,ci->c", W1, np.linalg.solve(M, W1[:, :, None])[:, :, 0])


def simulate_rs_statistics(
    ell: int,
    path_length: int = 2000,
    reps: int = 200_000,
    seed: int = 0,
    workers: int = 1,
) -> np.ndarray:
    """
    Draws of the limiting statistic (signed root when ell = 1).

    Paths are simulated in chunks with one spawned seed per chunk; results
    are concatenated in chunk order, so any worker count gives the same draws.
    """
    if ell < 1:
        raise CriticalValueError(f"Restriction count must be positive, got {ell}")
    if path_length < MIN_PATH_LENGTH or reps < MIN_REPS:
        raise CriticalValueError(
            f"Need path_length >= {MIN_PATH_LENGTH} and reps >= {MIN_REPS}, "
            f"got {path_length}, {reps}"
        )

    per_chunk = max(1, CHUNK_ELEMENTS // (path_length * ell))
    counts = [min(per_chunk, reps - lo) for lo in range(0, reps, per_chunk)]
    seeds = np.random.SeedSequence(seed).spawn(len(counts))
    tasks = [(ell, path_length, count, seq) for count, seq in zip(counts, seeds)]

    if workers > 1:
        with Pool(processes=workers) as pool:
            parts = pool.map(_simulate_chunk, tasks)
    else:
        parts = [_simulate_chunk(task) for task in tasks]
    return np.concatenate(parts)


def simulate_rs_quantiles(
    ell: int,
    probabilities: Iterable[float],
    path_length: int = 2000,
    reps: int = 200_000,
    seed: int = 0,
    workers: int = 1,
) -> Dict[float, float]:
    """Empirical quantiles of the simulated statistic."""
    draws = simulate_rs_statistics(ell, path_length, reps, seed, workers)
    return {float(p): float(np.quantile(draws, p)) for p in probabilities}


def simulate_rs_critical_values(
    ell: int,
    alpha_levels: Iterable[float],
    path_length: int = 2000,
    reps: int = 200_000,
    seed: int = 0,
    workers: int = 1,
) -> Dict[float, float]:
    """
    Critical values keyed by alpha.

    ell = 1 returns the 1 - alpha/2 quantile of the signed root; ell > 1 the
    1 - alpha quantile of the Wald form.
    """
    alphas = [float(a) for a in alpha_levels]
    for alpha in alphas:
        if not 0.0 < alpha < 1.0:
            raise CriticalValueError(f"Significance level must lie in (0, 1), got {alpha}")

    draws = simulate_rs_statistics(ell, path_length, reps, seed, workers)
    level = (lambda a: 1.0 - a / 2.0) if ell == 1 else (lambda a: 1.0 - a)
    values = {alpha: float(np.quantile(draws, level(alpha))) for alpha in alphas}
    logger.info(f"Simulated critical values for ell={ell}: {values}")
    return values


def load_table(path: Optional[Path] = None) -> Dict[Tuple[int, float], float]:
    """Read the (ell, alpha, cv) table."""
    path = Path(path) if path is not None else DEFAULT_TABLE
    if not path.exists():
        logger.warning(f"Critical value table not found: {path}")
        return {}
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = {"ell", "alpha", "cv"} - set(frame.columns)
    if missing:
        raise CriticalValueError(f"Critical value table lacks columns {sorted(missing)}")
    return {
        (int(row.ell), round(float(row.alpha), 6)): float(row.cv)
        for row in frame.itertuples(index=False)
    }


def write_table(table: Dict[Tuple[int, float], float], path: Optional[Path] = None) -> None:
    """Write a table sorted by (ell, alpha), values rounded to 3 decimals."""
    path = Path(path) if path is not None else DEFAULT_TABLE
    path.parent.mkdir(parents=True, exist_ok=True)
    rows: List[Dict[str, float]] = [
        {"ell": ell, "alpha": alpha, "cv": round(cv, 3)}
        for (ell, alpha), cv in sorted(table.items())
    ]
    pd.DataFrame(rows, columns=["ell", "alpha", "cv"]).to_csv(path, index=False)
    logger.info(f"Wrote {len(rows)} critical values to {path}")


@lru_cache(maxsize=None)
def _cached_table(path: str) -> Dict[Tuple[int, float], float]:
    return load_table(Path(path))


@lru_cache(maxsize=None)
def _simulated_fallback(ell: int, alpha: float) -> float:
    return simulate_rs_critical_values(
        ell, [alpha], TABLE_PATH_LENGTH, TABLE_REPS, TABLE_SEED + ell
    )[alpha]


def rs_critical_value(ell: int, alpha: float = 0.05, table_path: Optional[Path] = None) -> float:
    """
    Critical value for ell restrictions at level alpha.

    The table covers ell 1..10 at alpha 0.05 and 0.10; other pairs are
    simulated once per process with the table settings.
    """
    key = (int(ell), round(float(alpha), 6))
    table = _cached_table(str(table_path or DEFAULT_TABLE))
    if key in table:
        return table[key]

    logger.warning(
        f"No tabulated critical value for ell={ell}, alpha={alpha}; simulating "
        f"({TABLE_REPS} paths of length {TABLE_PATH_LENGTH})"
    )
    return _simulated_fallback(key[0], key[1])
