#!/usr/bin/env python3
"""
SLIM Monte Carlo Driver
Runs replications (optionally across a process pool), folds them in
replication order into summary metrics and writes the CSV reports.
"""

import logging
import time
from dataclasses import dataclass, field
from functools import partial
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from slim.easi import EasiModel
from slim.model import MomentModel

from harness.config_loader import ExperimentConfig
from harness.metrics import estimation_metrics, mean_or_nan, rate, rimse
from harness.pipeline import (
    ReplicationResult,
    build_design,
    build_hypotheses,
    oracle_j_pvalue,
    run_replication,
)
from harness.report import (
    REPS_FILE,
    SUMMARY_FILE,
    TIMINGS_FILE,
    reps_frame,
    summary_frame,
    timings_frame,
    write_frame,
)

logger = logging.getLogger(__name__)

MAX_DIVERGENCE_SHARE = 0.05


class ExperimentError(Exception):
    """Raised when too many replications diverge."""

    pass


@dataclass
class McReport:
    """Aggregated Monte Carlo outcome."""

    config: ExperimentConfig
    summary: pd.DataFrame
    reps: pd.DataFrame
    timings: pd.DataFrame
    completed: int
    diverged: int
    failed: int = 0
    wall_clock: float = 0.0
    files: Dict[str, Path] = field(default_factory=dict)

    def stage_totals(self) -> Dict[str, float]:
        """Summed seconds per stage across replications."""
        if self.timings.empty:
            return {}
        return {k: float(v) for k, v in self.timings.drop(columns="rep").sum().items()}


def _estimation_rows(
    method: str, estimates: List[np.ndarray], truth: np.ndarray, names: List[str]
) -> List[Dict[str, Any]]:
    if not estimates:
        return []
    metrics = estimation_metrics(np.vstack(estimates), truth)
    rows = []
    for k, name in enumerate(names):
        for metric in ("bias", "sd", "rmse"):
            rows.append(
                {"method": method, "target": name, "metric": metric, "value": getattr(metrics, metric)[k]}
            )
    return rows


def summarize(
    results: List[ReplicationResult],
    config: ExperimentConfig,
    model: MomentModel,
    theta_true: np.ndarray,
) -> List[Dict[str, Any]]:
    """
    Summary rows (method, target, metric, value) in a fixed order.

    Only completed replications enter the metrics.
    """
    ok = [r for r in sorted(results, key=lambda r: r.rep) if r.ok]
    names = model.param_names
    rows: List[Dict[str, Any]] = []

    if config.refined:
        rows += _estimation_rows("first_stage", [r.theta_first for r in ok], theta_true, names)
    rows += _estimation_rows(config.pipeline, [r.theta_hat for r in ok], theta_true, names)
    if config.oracle:
        rows += _estimation_rows(
            "oracle", [r.oracle_theta for r in ok if r.oracle_theta is not None], theta_true, names
        )

    hypotheses = build_hypotheses(config, model, theta_true)
    for method in config.inference:
        per_rep = [r.inference.get(method) for r in ok]
        per_rep = [outcomes for outcomes in per_rep if outcomes is not None]
        if not per_rep:
            continue
        label = next((o.mode for outcomes in per_rep for o in outcomes if o is not None), method)
        for k, hyp in enumerate(hypotheses):
            outcomes = [outcomes[k] for outcomes in per_rep]
            truth_k = hyp.R @ theta_true
            target = hyp.name
            rows.append({"method": label, "target": target, "metric": "rejection_rate",
                         "value": rate([o.reject if o else None for o in outcomes])})
            if hyp.ell == 1:
                rows.append({"method": label, "target": target, "metric": "coverage",
                             "value": rate([o.covers(float(truth_k[0])) if o else None for o in outcomes])})
                rows.append({"method": label, "target": target, "metric": "mean_ci_length",
                             "value": mean_or_nan([o.ci_length if o else None for o in outcomes])})
            rows.append({"method": label, "target": target, "metric": "failed",
                         "value": float(sum(o is None for o in outcomes))})

    for variant in config.jtests:
        flags = [r.jtests[variant].reject(config.alpha) if variant in r.jtests else None for r in ok]
        rows.append({"method": f"j_{variant}", "target": "overidentification",
                     "metric": "rejection_rate", "value": rate(flags)})
    if config.oracle and model.overidentified:
        flags = [
            oracle_j_pvalue(r.oracle_j, model) < config.alpha if r.oracle_j is not None else None
            for r in ok
        ]
        rows.append({"method": "j_oracle", "target": "overidentification",
                     "metric": "rejection_rate", "value": rate(flags)})

    if isinstance(model, EasiModel) and ok:
        lay = model.layout
        b_true = theta_true[lay.b_cols].reshape(-1, model.m)
        arms = [(config.pipeline, [r.theta_hat for r in ok])]
        if config.refined:
            arms.insert(0, ("first_stage", [r.theta_first for r in ok]))
        if config.oracle:
            arms.append(("oracle", [r.oracle_theta for r in ok if r.oracle_theta is not None]))
        for method, thetas in arms:
            if not thetas:
                continue
            draws = np.vstack(thetas)[:, lay.b_cols].reshape(len(thetas), -1, model.m)
            rows.append({"method": method, "target": "engel_curves", "metric": "rimse",
                         "value": rimse(draws, b_true, config.rimse_domain, config.rimse_step)})

    rows.append({"method": "run", "target": "replications", "metric": "completed", "value": float(len(ok))})
    rows.append({"method": "run", "target": "replications", "metric": "diverged",
                 "value": float(sum(r.diverged for r in results))})
    rows.append({"method": "run", "target": "replications", "metric": "failed",
                 "value": float(sum(r.failed for r in results))})
    return rows


def run_replications(config: ExperimentConfig, workers: Optional[int] = None) -> List[ReplicationResult]:
    """
    All replications, returned in replication order regardless of workers.
    """
    workers = workers or config.parallel_workers
    task = partial(run_replication, config)
    reps = range(config.reps)
    if workers <= 1 or config.reps == 1:
        return [task(rep) for rep in reps]
    with Pool(processes=min(workers, config.reps)) as pool:
        return pool.map(task, reps)


def run_experiment(
    config: ExperimentConfig,
    out_dir: Optional[Path] = None,
    workers: Optional[int] = None,
) -> McReport:
    """
    Run, aggregate and (with out_dir) write summary.csv, reps.csv, timings.csv
    and any traces.

    Raises:
        ExperimentError: More than 5% of replications diverged or failed to
            generate data; reps.csv is still written so the failures can be
            inspected
    """
    logger.info("=" * 60)
    logger.info(f"SLIM experiment: {config.dgp}, pipeline={config.pipeline}, reps={config.reps}")
    logger.info("=" * 60)

    design = build_design(config)
    model, theta_true = design.model, design.theta_true
    started = time.perf_counter()
    results = run_replications(config, workers)
    wall_clock = time.perf_counter() - started

    diverged = sum(r.diverged for r in results)
    failed = sum(r.failed for r in results)
    completed = sum(r.ok for r in results)
    reps = reps_frame(results, model.param_names)
    files: Dict[str, Path] = {}

    if out_dir is not None:
        out_dir = Path(out_dir)
        files["reps"] = write_frame(reps, out_dir / REPS_FILE)

    if diverged + failed > MAX_DIVERGENCE_SHARE * config.reps:
        raise ExperimentError(
            f"{diverged + failed} of {config.reps} replications diverged or failed "
            f"({diverged} diverged, {failed} failed; limit {MAX_DIVERGENCE_SHARE:.0%})"
        )
    if diverged:
        logger.warning(f"{diverged} replication(s) diverged and were excluded")
    if failed:
        logger.warning(f"{failed} replication(s) failed to generate data and were excluded")

    summary = summary_frame(summarize(results, config, model, theta_true))
    timings = timings_frame(results)

    if out_dir is not None:
        files["summary"] = write_frame(summary, out_dir / SUMMARY_FILE)
        files["timings"] = write_frame(timings, out_dir / TIMINGS_FILE)
        for r in results:
            if r.trace is not None and r.trace.steps:
                r.trace.to_csv(str(out_dir / f"trace_{r.rep}.csv"))

    logger.info(f"✓ {completed} replication(s) completed in {wall_clock:.2f}s")
    return McReport(
        config=config,
        summary=summary,
        reps=reps,
        timings=timings,
        completed=completed,
        diverged=diverged,
        failed=failed,
        wall_clock=wall_clock,
        files=files,
    )
