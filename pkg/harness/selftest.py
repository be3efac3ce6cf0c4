#!/usr/bin/env python3
"""
SLIM Self-Test
Fast invariant checks runnable from the command line: analytic Jacobians,
the random-scaling recursion, pseudo-inverse identities, the online moment
average and the shipped critical value table.
"""

import logging
from typing import Callable, List, NamedTuple

import numpy as np

from slim.critical_values import TABLE_ALPHAS, TABLE_ELLS, load_table
from slim.easi import default_easi_config, generate_easi, model_from_easi
from slim.inference import RandomScalingState, rs_update, rs_variance_direct
from slim.jtest import OnlineGbarState
from slim.linalg import pinv_sym
from slim.model import LinearIvDesign, finite_difference_check, generate_linear_iv, model_from_linear_iv

logger = logging.getLogger(__name__)

JACOBIAN_TOL = 1e-5
RECURSION_TOL = 1e-10
PINV_TOL = 1e-8
KNOWN_CRITICAL_VALUES = {(1, 0.05): 6.747, (1, 0.1): 5.323}


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def check_linear_iv_jacobian() -> CheckResult:
    design = LinearIvDesign()
    model = model_from_linear_iv(design)
    data = generate_linear_iv(design, 200, seed=1)
    error = finite_difference_check(model, data, center=design.theta)
    return CheckResult("linear IV Jacobian", error <= JACOBIAN_TOL, f"max error {error:.2e}")


def check_easi_jacobian() -> CheckResult:
    config = default_easi_config()
    model = model_from_easi(config)
    data = generate_easi(config, 200, seed=2)
    error = finite_difference_check(model, data, scale=0.01, center=config.theta_true)
    return CheckResult("EASI Jacobian", error <= JACOBIAN_TOL, f"max error {error:.2e}")


def check_random_scaling_recursion() -> CheckResult:
    rng = np.random.default_rng(3)
    worst = 0.0
    for ell in (1, 2, 3):
        R = rng.standard_normal((ell, 4))
        path = np.cumsum(rng.standard_normal((200, 4)), axis=0) / np.arange(1, 201)[:, None]
        state = RandomScalingState(ell)
        for t, theta_bar in enumerate(path, start=1):
            rs_update(state, theta_bar, R)
            direct = rs_variance_direct(path[:t] @ R.T)
            scale = max(1.0, float(np.max(np.abs(direct))))
            worst = max(worst, float(np.max(np.abs(state.variance() - direct))) / scale)
    return CheckResult("random-scaling recursion", worst <= RECURSION_TOL, f"max rel error {worst:.2e}")


def check_pseudo_inverse() -> CheckResult:
    rng = np.random.default_rng(4)
    X = rng.standard_normal((6, 3))
    A = X @ X.T
    inv, rank = pinv_sym(A)
    error = float(np.max(np.abs(A @ inv @ A - A)))
    passed = rank == 3 and error <= PINV_TOL * float(np.max(np.abs(A)))
    return CheckResult("pseudo-inverse identity", passed, f"rank {rank}, error {error:.2e}")


def check_online_average() -> CheckResult:
    rng = np.random.default_rng(5)
    draws = rng.standard_normal((500, 4))
    state = OnlineGbarState(4)
    for g in draws:
        state.update(g)
    error = float(np.max(np.abs(state.g_bar - draws.mean(axis=0))))
    return CheckResult("online moment average", error <= 1e-12, f"error {error:.2e}")


def check_critical_value_table() -> CheckResult:
    table = load_table()
    problems = [
        f"{key}: {table.get(key)} != {value}"
        for key, value in KNOWN_CRITICAL_VALUES.items()
        if table.get(key) != value
    ]
    problems += [
        f"missing {(ell, alpha)}"
        for ell in TABLE_ELLS
        for alpha in TABLE_ALPHAS
        if (ell, alpha) not in table
    ]
    return CheckResult(
        "critical value table",
        not problems,
        "; ".join(problems) or f"{len(table)} entries",
    )


CHECKS: List[Callable[[], CheckResult]] = [
    check_linear_iv_jacobian,
    check_easi_jacobian,
    check_random_scaling_recursion,
    check_pseudo_inverse,
    check_online_average,
    check_critical_value_table,
]


def run_selftest() -> List[CheckResult]:
    """Run every check; an exception counts as a failure."""
    results = []
    for check in CHECKS:
        try:
            result = check()
        except Exception as e:
            result = CheckResult(check.__name__, False, f"raised {type(e).__name__}: {e}")
        status = "✓" if result.passed else "✗"
        logger.info(f"{status} {result.name}: {result.detail}")
        results.append(result)
    return results
