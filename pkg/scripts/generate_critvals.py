#!/usr/bin/env python3
"""
Regenerate the shipped random-scaling critical value table.

Simulates the pivotal limit for each restriction count and level and writes
data/rs_critical_values.csv (or --out).
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

import argparse
import logging

from slim.critical_values import (
    DEFAULT_TABLE,
    TABLE_ALPHAS,
    TABLE_PATH_LENGTH,
    TABLE_REPS,
    TABLE_SEED,
    load_table,
    simulate_rs_critical_values,
    write_table,
)

logging.basicConfig(level=logging.INFO, format="[%(asctime)s] %(levelname)s - %(message)s")
logger = logging.getLogger(__name__)


def main():
    """Main entry point."""
    parser = argparse.ArgumentParser(description="Simulate random-scaling critical values")
    parser.add_argument("--ell", type=int, action="append", help="Restriction counts (default: 2..10)")
    parser.add_argument("--alpha", type=float, action="append", help="Levels (default: 0.05, 0.10)")
    parser.add_argument("--reps", type=int, default=TABLE_REPS, help="Paths per restriction count")
    parser.add_argument("--path-length", type=int, default=TABLE_PATH_LENGTH, help="Grid points per path")
    parser.add_argument("--seed", type=int, default=TABLE_SEED, help="Simulation seed")
    parser.add_argument("--workers", type=int, default=1, help="Worker processes")
    parser.add_argument("--out", default=str(DEFAULT_TABLE), help="Output CSV")
    parser.add_argument("--replace", action="store_true", help="Drop existing rows instead of merging")
    args = parser.parse_args()

    ells = args.ell or list(range(2, 11))
    alphas = args.alpha or list(TABLE_ALPHAS)
    out = Path(args.out)
    table = {} if args.replace else load_table(out)

    logger.info("=" * 60)
    for ell in ells:
        values = simulate_rs_critical_values(
            ell, alphas, args.path_length, args.reps, args.seed + ell, args.workers
        )
        for alpha, cv in values.items():
            table[(ell, round(alpha, 6))] = cv
            logger.info(f"✓ ell={ell} alpha={alpha}: {cv:.3f}")
    logger.info("=" * 60)

    write_table(table, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
