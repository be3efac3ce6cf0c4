#!/usr/bin/env python3
"""
SLIM Command Line
Subcommands: run (Monte Carlo experiment), critvals (simulate critical values),
estimate (single dataset report) and selftest (invariant suite).
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

import argparse
import logging
import logging.handlers
from typing import Any, Dict, List, Optional

import numpy as np

from slim.critical_values import (
    CriticalValueError,
    DEFAULT_TABLE,
    load_table,
    simulate_rs_critical_values,
    write_table,
)
from slim.engine import DivergenceError
from slim.refine import RefinementError
from slim.schedule import ScheduleError
from slim.model import Dataset, ModelError

from harness.config_loader import (
    DEFAULT_EXPERIMENT_CONFIG,
    ExperimentConfig,
    ExperimentConfigError,
    get_nested_value,
    load_config,
)
from harness.experiment import ExperimentError, run_experiment
from harness.pipeline import build_design, estimate, oracle_j_pvalue, replication_streams
from harness.report import format_summary
from harness.selftest import run_selftest
from utils.env_loader import load_env, slim_overrides

LOG_FORMAT = "[%(asctime)s] %(levelname)s - %(message)s"

logger = logging.getLogger("slim")


def setup_logging(config: Optional[Dict[str, Any]] = None, verbose: bool = False) -> None:
    """Console logging plus an optional rotating file from the `logging` section."""
    config = config or {}
    level_name = "DEBUG" if verbose else str(get_nested_value(config, "logging.level", "INFO")).upper()
    level = getattr(logging, level_name, logging.INFO)

    handlers: List[logging.Handler] = [logging.StreamHandler()]
    log_file = get_nested_value(config, "logging.file")
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(
            logging.handlers.RotatingFileHandler(
                log_file,
                maxBytes=int(get_nested_value(config, "logging.max_bytes", 10485760)),
                backupCount=int(get_nested_value(config, "logging.backup_count", 3)),
            )
        )
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)


def log_env_overrides() -> None:
    active = slim_overrides()
    if active:
        logger.info(f"Environment overrides: {', '.join(sorted(active))}")


def load_experiment(path: str, overrides: Dict[str, Any]) -> tuple:
    """Raw config mapping and the validated ExperimentConfig; the file must exist."""
    raw = load_config(path, DEFAULT_EXPERIMENT_CONFIG, required=True)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return raw, ExperimentConfig.from_dict(raw)


def cmd_run(args: argparse.Namespace) -> int:
    raw, config = load_experiment(args.config, {"reps": args.reps, "seed": args.seed})
    setup_logging(raw, args.verbose)
    log_env_overrides()
    report = run_experiment(config, Path(args.out), workers=args.workers)

    logger.info("=" * 60)
    logger.info("Summary:")
    for line in format_summary(report.summary).splitlines():
        logger.info(f"  {line}")
    logger.info("Stage totals (s):")
    for stage, seconds in report.stage_totals().items():
        logger.info(f"  {stage}: {seconds:.3f}")
    for name, path in report.files.items():
        logger.info(f"✓ {name}: {path}")
    logger.info("=" * 60)
    return 0


def cmd_critvals(args: argparse.Namespace) -> int:
    setup_logging(verbose=args.verbose)
    alphas = args.alpha or [0.05, 0.1]
    values = simulate_rs_critical_values(
        args.ell, alphas, args.path_length, args.reps, args.seed, args.workers
    )

    logger.info("=" * 60)
    logger.info(f"Random-scaling critical values, ell={args.ell}")
    for alpha, cv in values.items():
        logger.info(f"  alpha={alpha}: {cv:.3f}")
    logger.info("=" * 60)

    if args.write:
        table_path = Path(args.table) if args.table else DEFAULT_TABLE
        table = load_table(table_path)
        table.update({(args.ell, round(alpha, 6)): cv for alpha, cv in values.items()})
        write_table(table, table_path)
        logger.info(f"✓ Updated {table_path}")
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    raw, config = load_experiment(args.config, {"seed": args.seed})
    setup_logging(raw, args.verbose)
    log_env_overrides()
    design = build_design(config)
    streams = replication_streams(config.seed, 0)

    if args.data:
        data = Dataset.from_csv(args.data)
        if data.width != len(design.columns):
            raise ExperimentConfigError(
                f"{args.data} has {data.width} columns, {config.dgp} expects {len(design.columns)}"
            )
        config.n = data.n
        logger.info(f"Loaded {data.n} observations from {args.data}")
    else:
        data = design.generate(config.n, streams["data"])
        logger.info(f"Generated {data.n} observations ({config.dgp})")

    result = estimate(config, design, data, streams)
    names = design.model.param_names

    logger.info("=" * 60)
    logger.info(f"Estimates ({config.pipeline}):")
    for k, name in enumerate(names):
        truth = "" if args.data else f"  (true {design.theta_true[k]:.6f})"
        logger.info(f"  {name}: {result.theta_hat[k]:.6f}{truth}")
    logger.info(f"  gamma0: {result.gamma0:.6g}")

    for method, outcomes in result.inference.items():
        for outcome in outcomes:
            if outcome is None:
                logger.info(f"  {method}: unavailable")
                continue
            interval = ""
            if outcome.ci_lower is not None:
                interval = f", CI [{outcome.ci_lower:.6f}, {outcome.ci_upper:.6f}]"
            logger.info(
                f"  {outcome.mode}: stat {outcome.statistic:.4f} vs {outcome.critical_value:.3f}"
                f" reject={outcome.reject}{interval}"
            )

    for variant, jres in result.jtests.items():
        logger.info(f"  J ({variant}): {jres.statistic:.4f}, df {jres.df}, p {jres.p_value:.4f}")
    if result.oracle_theta is not None:
        logger.info(f"  oracle: {np.array2string(result.oracle_theta, precision=6)}")
        if result.oracle_j is not None:
            p_value = oracle_j_pvalue(result.oracle_j, design.model)
            logger.info(f"  J (full-sample two-step): {result.oracle_j:.4f}, p {p_value:.4f}")
    for stage, seconds in result.timings.items():
        logger.info(f"  time {stage}: {seconds:.3f}s")
    logger.info("=" * 60)
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    setup_logging(verbose=args.verbose)
    logger.info("=" * 60)
    logger.info("SLIM self-test")
    logger.info("=" * 60)
    results = run_selftest()
    failed = [r for r in results if not r.passed]
    logger.info(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slim", description="SLIM - stochastic approximation for overidentified GMM"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a Monte Carlo experiment")
    run.add_argument("--config", required=True, help="Experiment YAML file")
    run.add_argument("--out", required=True, help="Output directory for CSV reports")
    run.add_argument("--workers", type=int, default=None, help="Worker processes (default: config)")
    run.add_argument("--reps", type=int, default=None, help="Override replication count")
    run.add_argument("--seed", type=int, default=None, help="Override master seed")
    run.set_defaults(func=cmd_run)

    crit = sub.add_parser("critvals", help="Simulate random-scaling critical values")
    crit.add_argument("--ell", type=int, default=1, help="Number of restrictions (default: 1)")
    crit.add_argument("--reps", type=int, default=200_000, help="Simulated paths (default: 200000)")
    crit.add_argument("--path-length", type=int, default=2000, help="Grid points per path (default: 2000)")
    crit.add_argument("--alpha", type=float, action="append", help="Level (repeatable; default 0.05, 0.10)")
    crit.add_argument("--seed", type=int, default=0, help="Simulation seed (default: 0)")
    crit.add_argument("--workers", type=int, default=1, help="Worker processes (default: 1)")
    crit.add_argument("--write", action="store_true", help="Store the values in the shipped table")
    crit.add_argument("--table", default=None, help="Table path (default: data/rs_critical_values.csv)")
    crit.set_defaults(func=cmd_critvals)

    est = sub.add_parser("estimate", help="Estimate on a single dataset")
    est.add_argument("--config", required=True, help="Experiment YAML file")
    est.add_argument("--data", default=None, help="CSV dataset (default: simulate from the DGP)")
    est.add_argument("--seed", type=int, default=None, help="Override master seed")
    est.set_defaults(func=cmd_estimate)

    selftest = sub.add_parser("selftest", help="Run the invariant suite")
    selftest.set_defaults(func=cmd_selftest)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    load_env()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ExperimentConfigError, CriticalValueError, ModelError) as e:
        logger.error(f"Invalid input: {e}")
        return 2
    except ExperimentError as e:
        logger.error(f"Experiment failed: {e}")
        return 1
    except DivergenceError as e:
        logger.error(f"Estimation diverged: {e}")
        return 1
    except (ScheduleError, RefinementError) as e:
        logger.error(f"Numerical failure: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
