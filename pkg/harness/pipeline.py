#!/usr/bin/env python3
"""
SLIM Estimation Pipeline
One replication: design construction, warm start, learning-rate selection,
first-order stage, optional refinement, inference, J-tests and the
full-sample comparator.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from slim.distributions import chi2_sf
from slim.easi import EasiDgpConfig, generate_easi, model_from_easi
from slim.engine import DivergenceError, TraceRecorder, run_first_order, run_warm_start
from slim.inference import (
    Hypothesis,
    InferenceError,
    InferenceResult,
    RandomScalingAccumulator,
    plugin_wald,
    rs_wald,
)
from slim.jtest import JTestResult, OnlineGbarAccumulator, j_debiased, j_online, j_plugin, mixture_weight
from slim.linalg import sym_sqrt
from slim.model import (
    ConfigurationError,
    Dataset,
    GenerationError,
    LinearIvDesign,
    MomentModel,
    full_sample_moments,
    generate_linear_iv,
    model_from_linear_iv,
)
from slim.oracle import two_step_efficient_gmm
from slim.refine import build_operators, run_refinement
from slim.schedule import BatchSchedule, LearningRate, WarmStartConfig, select_gamma0

from harness.config_loader import ExperimentConfig, ExperimentConfigError

logger = logging.getLogger(__name__)

# spawn-key stream ids of one replication
STREAMS = ("data", "warm_start", "tuning", "first_stage", "operators", "refinement")


def replication_streams(seed: int, rep: int) -> Dict[str, np.random.Generator]:
    """Independent Philox streams keyed by (rep, stream id)."""
    return {
        name: np.random.Generator(
            np.random.Philox(np.random.SeedSequence(seed, spawn_key=(rep, idx)))
        )
        for idx, name in enumerate(STREAMS)
    }


@dataclass
class Design:
    """Model, data generator and true parameter of a configured DGP."""

    name: str
    model: MomentModel
    theta_true: np.ndarray
    generator: Any
    columns: Tuple[str, ...] = ()

    def generate(self, n: int, rng: np.random.Generator) -> Dataset:
        return self.generator(n, rng)


def build_design(config: ExperimentConfig) -> Design:
    """
    Instantiate the configured DGP.

    Raises:
        ExperimentConfigError: Invalid DGP parameters
    """
    params = dict(config.dgp_params or {})
    try:
        if config.dgp == "linear_iv":
            allowed = set(LinearIvDesign.__dataclass_fields__)
            unknown = set(params) - allowed
            if unknown:
                raise ExperimentConfigError(f"Unknown linear_iv keys: {sorted(unknown)}")
            design = LinearIvDesign(**params)
            return Design(
                "linear_iv",
                model_from_linear_iv(design),
                design.theta,
                lambda n, rng: generate_linear_iv(design, n, rng=rng),
                design.columns(),
            )

        easi = EasiDgpConfig.from_dict(params)
        return Design(
            "easi",
            model_from_easi(easi),
            easi.theta_true,
            lambda n, rng: generate_easi(easi, n, rng=rng),
            easi.columns(),
        )
    except ConfigurationError as e:
        raise ExperimentConfigError(str(e)) from e


def build_hypotheses(
    config: ExperimentConfig, model: MomentModel, theta_true: np.ndarray
) -> List[Hypothesis]:
    """
    Targets from config entries {index | param, value?} or {R, c}.

    A missing value tests the true parameter, so rejection rates are sizes.
    """
    names = model.param_names
    hypotheses = []
    for entry in config.hypotheses:
        entry = dict(entry)
        if "param" in entry:
            if entry["param"] not in names:
                raise ExperimentConfigError(f"Unknown parameter name: {entry['param']}")
            entry["index"] = names.index(entry.pop("param"))
        if "index" in entry:
            index = int(entry["index"])
            if not 0 <= index < model.d:
                raise ExperimentConfigError(f"Parameter index {index} out of range")
            value = float(entry.get("value", theta_true[index]))
            hypotheses.append(Hypothesis.coordinate(model.d, index, value, names[index]))
        elif "R" in entry:
            R = np.atleast_2d(np.asarray(entry["R"], dtype=float))
            c = entry.get("c", R @ theta_true)
            hypotheses.append(Hypothesis(R, c, entry.get("name", f"R{len(hypotheses)}")))
        else:
            raise ExperimentConfigError(f"Hypothesis needs index, param or R: {entry}")
    return hypotheses


@dataclass
class ReplicationResult:
    """Everything one replication reports."""

    rep: int
    theta_hat: Optional[np.ndarray] = None
    theta_first: Optional[np.ndarray] = None
    gamma0: Optional[float] = None
    inference: Dict[str, List[Optional[InferenceResult]]] = field(default_factory=dict)
    jtests: Dict[str, JTestResult] = field(default_factory=dict)
    oracle_theta: Optional[np.ndarray] = None
    oracle_j: Optional[float] = None
    oracle_converged: Optional[bool] = None
    timings: Dict[str, float] = field(default_factory=dict)
    diverged: bool = False
    failed: bool = False
    error: str = ""
    trace: Optional[TraceRecorder] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return not self.diverged and not self.failed and self.theta_hat is not None


class StageTimer:
    """Collects wall-clock seconds per named stage."""

    def __init__(self, timings: Dict[str, float]):
        self.timings = timings
        self._origin = time.perf_counter()

    def __call__(self, stage: str):
        timer = self

        class _Stage:
            def __enter__(self):
                self.start = time.perf_counter()

            def __exit__(self, *exc):
                timer.timings[stage] = timer.timings.get(stage, 0.0) + time.perf_counter() - self.start
                return False

        return _Stage()

    def finish(self) -> None:
        self.timings["total"] = time.perf_counter() - self._origin


def _rs_results(
    accumulators: List[RandomScalingAccumulator],
    hypotheses: List[Hypothesis],
    theta_bar: np.ndarray,
    config: ExperimentConfig,
    N_eff: int,
) -> List[Optional[InferenceResult]]:
    results = []
    for acc, hyp in zip(accumulators, hypotheses):
        try:
            results.append(
                rs_wald(acc.state, theta_bar, hyp, config.n, N_eff, config.B_g, config.rs_mode, config.alpha)
            )
        except InferenceError as e:
            logger.warning(f"Random-scaling test for {hyp.name} skipped: {e}")
            results.append(None)
    return results


def estimate(
    config: ExperimentConfig,
    design: Design,
    data: Dataset,
    streams: Dict[str, np.random.Generator],
    rep: int = 0,
) -> ReplicationResult:
    """
    Run the configured pipeline on one dataset.

    Raises:
        DivergenceError: Propagated from either stage
    """
    model = design.model
    result = ReplicationResult(rep=rep)
    timer = StageTimer(result.timings)
    hypotheses = build_hypotheses(config, model, design.theta_true)

    weight_root = None
    if config.first_stage_weight == "instrument":
        weight_root = sym_sqrt(model.instrument_weight(data))

    theta0 = np.zeros(model.d) if config.theta0 is None else np.asarray(config.theta0, dtype=float)
    if theta0.shape != (model.d,):
        raise ExperimentConfigError(f"theta0 must have length {model.d}")

    ws_cfg = WarmStartConfig.from_dict(config.warm_start) if config.warm_start else None
    if ws_cfg is not None:
        with timer("warm_start"):
            theta0 = run_warm_start(model, data, ws_cfg, theta0, rng=streams["warm_start"], weight_root=weight_root)

    gamma0 = config.gamma0
    if gamma0 is None:
        tuning_cfg = ws_cfg or WarmStartConfig(B_ws=min(config.B_g, data.n), a=config.a)
        with timer("tuning"):
            gamma0 = select_gamma0(
                model,
                data,
                theta0,
                tuning_cfg,
                B_main=config.B_g,
                s0=config.s0,
                batch_index_set_limit=config.batch_index_set_limit,
                rng=streams["tuning"],
                weight_root=weight_root,
            )
    result.gamma0 = gamma0

    lr = LearningRate(gamma0, config.a)
    schedule = BatchSchedule(config.B_g, config.B_G0, "constant")
    trace = TraceRecorder(config.trace_stride, model.param_names) if config.trace_stride else None
    result.trace = trace

    use_rs = "random_scaling" in config.inference
    first_hooks = [RandomScalingAccumulator(h.R) for h in hypotheses] if use_rs and not config.refined else []

    with timer("first_stage"):
        first = run_first_order(
            model, data, lr, schedule, theta0, config.N, hooks=first_hooks,
            rng=streams["first_stage"], weight_root=weight_root, trace=trace,
        )
    result.theta_first = first.theta_bar

    if not config.refined:
        result.theta_hat = first.theta_bar
        if use_rs:
            result.inference["random_scaling"] = _rs_results(
                first_hooks, hypotheses, first.theta_bar, config, config.N
            )
        timer.finish()
        return result

    N, T = config.N, config.T
    with timer("operators"):
        ops = build_operators(
            model,
            data,
            first.theta_bar,
            config.refine["M_MB"],
            config.B_g,
            N=N,
            mode=config.refine["weight_mode"],
            structure=config.refine["structure"],
            rng=streams["operators"],
            phi_max_rows=config.refine["phi_max_rows"],
        )

    rs_hooks = [RandomScalingAccumulator(h.R) for h in hypotheses] if use_rs else []
    gbar = OnlineGbarAccumulator(model.d_g)
    with timer("refinement"):
        refined = run_refinement(
            model,
            data,
            first.theta,
            ops,
            lr.with_offset(N),
            BatchSchedule(config.B_g, config.B_G0, config.batch_growth, start=N),
            T,
            hooks=rs_hooks + [gbar],
            rng=streams["refinement"],
            precondition=config.pipeline == "second_order",
            trace=trace,
        )
    theta_hat = refined.theta_bar
    result.theta_hat = theta_hat

    with timer("inference"):
        if use_rs:
            result.inference["random_scaling"] = _rs_results(rs_hooks, hypotheses, theta_hat, config, T - N)
        if "plugin" in config.inference:
            plugin = []
            for hyp in hypotheses:
                try:
                    plugin.append(plugin_wald(model, data, theta_hat, hyp, config.n, T - N, config.B_g, config.alpha))
                except InferenceError as e:
                    logger.warning(f"Plug-in test for {hyp.name} skipped: {e}")
                    plugin.append(None)
            result.inference["plugin"] = plugin

    if config.jtests and model.overidentified:
        with timer("jtests"):
            if "plugin" in config.jtests:
                tau = mixture_weight(config.n, T - N, config.B_g)
                result.jtests["plugin"] = j_plugin(model, data, theta_hat, ops.W, config.n, tau)
            if "debiased" in config.jtests:
                result.jtests["debiased"] = j_debiased(model, data, theta_hat, config.n)
            if "online" in config.jtests:
                result.jtests["online"] = j_online(gbar.state, ops.W, config.n, model.d, config.B_g, T - N)

    if config.oracle:
        with timer("oracle"):
            report = two_step_efficient_gmm(model, data, theta_hat, model.instrument_weight(data))
            result.oracle_theta = report.theta_hat
            result.oracle_converged = report.converged
            if model.overidentified:
                g_bar = full_sample_moments(model, data, report.theta_hat)
                result.oracle_j = float(config.n * g_bar @ report.weight @ g_bar)

    timer.finish()
    return result


def oracle_j_pvalue(statistic: float, model: MomentModel) -> float:
    """p-value of the full-sample two-step J against chi2_{dg-d}."""
    return chi2_sf(statistic, model.d_g - model.d)


def run_replication(config: ExperimentConfig, rep: int) -> ReplicationResult:
    """
    Generate data for replication `rep` and estimate; divergence and data
    generation failures are recorded instead of raised.
    """
    design = build_design(config)
    streams = replication_streams(config.seed, rep)
    try:
        data = design.generate(config.n, streams["data"])
    except GenerationError as e:
        logger.warning(f"Replication {rep} data generation failed: {e}")
        return ReplicationResult(rep=rep, failed=True, error=str(e))
    try:
        return estimate(config, design, data, streams, rep)
    except DivergenceError as e:
        logger.warning(f"Replication {rep} diverged: {e}")
        return ReplicationResult(rep=rep, diverged=True, error=str(e))
