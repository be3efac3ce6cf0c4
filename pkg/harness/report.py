#!/usr/bin/env python3
"""
SLIM Experiment Reports
Per-replication rows, summary rows (method, target, metric, value) and stage
timings written as CSV with round-trip float precision.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from harness.pipeline import ReplicationResult

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["method", "target", "metric", "value"]
SUMMARY_FILE = "summary.csv"
REPS_FILE = "reps.csv"
TIMINGS_FILE = "timings.csv"


def replication_row(result: ReplicationResult, names: List[str]) -> Dict[str, Any]:
    """Flatten one replication into a reps.csv row."""
    row: Dict[str, Any] = {
        "rep": result.rep,
        "diverged": result.diverged,
        "failed": result.failed,
        "gamma0": result.gamma0,
    }

    for prefix, values in (
        ("theta_hat", result.theta_hat),
        ("first_stage", result.theta_first),
        ("oracle", result.oracle_theta),
    ):
        if values is not None:
            for name, value in zip(names, values):
                row[f"{prefix}_{name}"] = float(value)

    for method, outcomes in sorted(result.inference.items()):
        for k, outcome in enumerate(outcomes):
            if outcome is None:
                continue
            key = f"{method}_h{k}"
            row[f"{key}_statistic"] = outcome.statistic
            row[f"{key}_reject"] = outcome.reject
            if outcome.ci_lower is not None:
                row[f"{key}_ci_lower"] = outcome.ci_lower
                row[f"{key}_ci_upper"] = outcome.ci_upper

    for variant, jres in sorted(result.jtests.items()):
        row[f"j_{variant}_statistic"] = jres.statistic
        row[f"j_{variant}_df"] = jres.df
        row[f"j_{variant}_p_value"] = jres.p_value

    if result.oracle_j is not None:
        row["j_oracle_statistic"] = result.oracle_j
    row["error"] = result.error
    return row


def reps_frame(results: List[ReplicationResult], names: List[str]) -> pd.DataFrame:
    rows = [replication_row(r, names) for r in sorted(results, key=lambda r: r.rep)]
    return pd.DataFrame(rows)


def timings_frame(results: List[ReplicationResult]) -> pd.DataFrame:
    """One row per replication, one column per stage (seconds)."""
    rows = [{"rep": r.rep, **r.timings} for r in sorted(results, key=lambda r: r.rep)]
    frame = pd.DataFrame(rows)
    return frame.fillna(0.0) if not frame.empty else frame


def summary_frame(rows: List[Dict[str, Any]]) -> pd.DataFrame:
    frame = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    frame["value"] = frame["value"].astype(float)
    return frame


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def read_summary(path: Path) -> pd.DataFrame:
    """Parse a summary.csv back into the in-memory layout."""
    frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=False, na_values=["", "nan", "NaN"])
    missing = set(SUMMARY_COLUMNS) - set(frame.columns)
    if missing:
        raise ValueError(f"{path} lacks summary columns {sorted(missing)}")
    frame["target"] = frame["target"].astype(str)
    frame["value"] = frame["value"].astype(float)
    return frame[SUMMARY_COLUMNS]


def summary_value(frame: pd.DataFrame, method: str, target: str, metric: str) -> Optional[float]:
    """Look up one summary cell; None when absent."""
    hit = frame[(frame.method == method) & (frame.target == target) & (frame.metric == metric)]
    if hit.empty:
        return None
    return float(hit["value"].iloc[0])


def format_summary(frame: pd.DataFrame) -> str:
    """Wide text table: rows (method, target), columns metrics."""
    if frame.empty:
        return "(empty summary)"
    wide = frame.pivot_table(
        index=["method", "target"], columns="metric", values="value", aggfunc="first", sort=False
    )
    with pd.option_context("display.float_format", lambda v: f"{v:.4f}", "display.width", 160):
        return wide.to_string()
