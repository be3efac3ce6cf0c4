#!/usr/bin/env python3
"""
Configuration loader for SLIM experiments.
Supports YAML configuration files with environment variable overrides and
strict validation against the experiment schema.
"""

import copy
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from slim.schedule import ScheduleError, WarmStartConfig

logger = logging.getLogger(__name__)

PIPELINES = ("first_order", "first_order_refined_weight", "second_order")
DGPS = ("linear_iv", "easi")
INFERENCE_METHODS = ("random_scaling", "plugin")
JTEST_VARIANTS = ("plugin", "debiased", "online")


class ExperimentConfigError(Exception):
    """Raised for unknown keys or invalid values in an experiment config."""

    pass


def load_config(
    config_path: str, defaults: Optional[Dict[str, Any]] = None, required: bool = False
) -> Dict[str, Any]:
    """
    Load configuration from YAML file.

    Args:
        config_path: Path to YAML configuration file
        defaults: Default configuration dictionary
        required: Raise instead of falling back to defaults when the file is missing

    Returns:
        Configuration dictionary (defaults merged, environment applied)

    Raises:
        ExperimentConfigError: File cannot be parsed, or is missing and required
    """
    config_file = Path(config_path)
    base = copy.deepcopy(defaults) if defaults else {}

    if not config_file.exists():
        if required:
            raise ExperimentConfigError(f"Configuration file not found: {config_path}")
        logger.warning(f"Configuration file not found: {config_path}")
        if defaults:
            logger.info("Using default configuration")
        return apply_env_overrides(base)

    try:
        with open(config_file, "r") as f:
            config = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ExperimentConfigError(f"Failed to parse {config_path}: {e}") from e

    if not isinstance(config, dict):
        raise ExperimentConfigError(f"{config_path} must hold a mapping at top level")

    logger.info(f"Loaded configuration from: {config_path}")
    if defaults:
        config = merge_configs(base, config)

    return apply_env_overrides(config)


def merge_configs(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """
    Deep merge two configuration dictionaries.

    Args:
        base: Base configuration
        override: Override configuration

    Returns:
        Merged configuration
    """
    result = base.copy()

    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = merge_configs(result[key], value)
        else:
            result[key] = value

    return result


def parse_env_value(raw: str) -> Any:
    """Interpret an environment string as YAML (numbers, booleans, lists)."""
    try:
        return yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw


def _resolve_path(config: Dict[str, Any], tokens: List[str]) -> Optional[List[str]]:
    """
    Match underscore-split tokens against existing keys, longest key first.

    Example: ["dgp", "params", "d", "g"] -> ["dgp_params", "d_g"]
    Matching ignores case, so "b", "g" finds "B_g".
    """
    if not tokens:
        return []
    lookup = {str(k).lower(): k for k in config}
    fallback = None
    for width in range(len(tokens), 0, -1):
        key = lookup.get("_".join(tokens[:width]))
        if key is None:
            continue
        rest = tokens[width:]
        if not rest:
            return [key]
        if isinstance(config[key], dict):
            tail = _resolve_path(config[key], rest)
            if tail is not None:
                return [key] + tail
            if fallback is None:
                fallback = [key, "_".join(rest)]
    return fallback


def apply_env_overrides(config: Dict[str, Any], prefix: str = "SLIM") -> Dict[str, Any]:
    """
    Apply environment variable overrides to configuration.

    Environment variables should be in format: PREFIX_SECTION_KEY
    Example: SLIM_DGP_PARAMS_D_G=6 sets dgp_params.d_g

    Keys are resolved greedily against the existing structure so names that
    contain underscores work; an unmatched remainder becomes one new key
    inside the deepest matching section.
    """
    for env_key, env_value in sorted(os.environ.items()):
        if not env_key.startswith(f"{prefix}_"):
            continue

        tokens = env_key[len(prefix) + 1 :].lower().split("_")
        path = _resolve_path(config, tokens) or ["_".join(tokens)]

        current = config
        for part in path[:-1]:
            if not isinstance(current.get(part), dict):
                current[part] = {}
            current = current[part]

        current[path[-1]] = parse_env_value(env_value)
        logger.debug(f"Applied environment override: {env_key} = {env_value}")

    return config


def get_nested_value(config: Dict[str, Any], path: str, default: Any = None) -> Any:
    """
    Get nested configuration value using dot notation.

    Args:
        config: Configuration dictionary
        path: Dot-separated path (e.g., "refine.M_MB")
        default: Default value if path not found
    """
    current = config
    for part in path.split("."):
        if not isinstance(current, dict) or part not in current:
            return default
        current = current[part]
    return current


# Default experiment configuration
DEFAULT_EXPERIMENT_CONFIG: Dict[str, Any] = {
    "dgp": "linear_iv",
    "dgp_params": {},
    "n": 5000,
    "reps": 100,
    "pipeline": "first_order",
    "N": 10000,
    "T": 20000,
    "B_g": 32,
    "B_G0": 32,
    "batch_growth": "logarithmic",
    "a": 0.501,
    "gamma0": None,
    "theta0": None,
    "first_stage_weight": "identity",
    "warm_start": None,
    "s0": 5.0,
    "batch_index_set_limit": 10000,
    "refine": {
        "M_MB": 1000,
        "weight_mode": "minibatch",
        "structure": None,
        "phi_max_rows": 1_000_000,
    },
    "inference": ["random_scaling"],
    "rs_mode": "sampling",
    "jtests": [],
    "hypotheses": [{"index": 0}],
    "alpha": 0.05,
    "oracle": False,
    "rimse_domain": [-0.7, 0.9],
    "rimse_step": 0.1,
    "trace_stride": 0,
    "seed": 12345,
    "parallel_workers": 1,
    "logging": {"level": "INFO", "file": None, "max_bytes": 10485760, "backup_count": 3},
}

REFINE_KEYS = {"M_MB", "weight_mode", "structure", "phi_max_rows"}


@dataclass
class ExperimentConfig:
    """Validated experiment settings (field names match the config keys)."""

    dgp: str = "linear_iv"
    dgp_params: Dict[str, Any] = field(default_factory=dict)
    n: int = 5000
    reps: int = 100
    pipeline: str = "first_order"
    N: int = 10000
    T: int = 20000
    B_g: int = 32
    B_G0: int = 32
    batch_growth: str = "logarithmic"
    a: float = 0.501
    gamma0: Optional[float] = None
    theta0: Optional[List[float]] = None
    first_stage_weight: str = "identity"
    warm_start: Optional[Dict[str, Any]] = None
    s0: float = 5.0
    batch_index_set_limit: int = 10000
    refine: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_EXPERIMENT_CONFIG["refine"]))
    inference: List[str] = field(default_factory=lambda: ["random_scaling"])
    rs_mode: str = "sampling"
    jtests: List[str] = field(default_factory=list)
    hypotheses: List[Dict[str, Any]] = field(default_factory=lambda: [{"index": 0}])
    alpha: float = 0.05
    oracle: bool = False
    rimse_domain: List[float] = field(default_factory=lambda: [-0.7, 0.9])
    rimse_step: float = 0.1
    trace_stride: int = 0
    seed: int = 12345
    parallel_workers: int = 1

    @property
    def refined(self) -> bool:
        """Pipeline has a refinement stage."""
        return self.pipeline != "first_order"

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        """
        Build and validate from a config mapping.

        The `logging` section is accepted and ignored here.

        Raises:
            ExperimentConfigError: Unknown keys or invalid values
        """
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names - {"logging"}
        if unknown:
            raise ExperimentConfigError(f"Unknown configuration keys: {sorted(unknown)}")

        values = {k: copy.deepcopy(v) for k, v in data.items() if k in names}
        refine = merge_configs(DEFAULT_EXPERIMENT_CONFIG["refine"], values.get("refine") or {})
        values["refine"] = refine
        config = cls(**values)
        config.validate()
        return config

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def validate(self) -> None:
        """Check value ranges and cross-field constraints."""
        if self.dgp not in DGPS:
            raise ExperimentConfigError(f"dgp must be one of {DGPS}, got {self.dgp}")
        if self.pipeline not in PIPELINES:
            raise ExperimentConfigError(f"pipeline must be one of {PIPELINES}, got {self.pipeline}")
        if self.reps < 1:
            raise ExperimentConfigError(f"reps must be >= 1, got {self.reps}")
        if self.n < 1 or self.N < 1:
            raise ExperimentConfigError("n and N must be positive")
        if self.refined and self.T <= self.N:
            raise ExperimentConfigError(f"T must exceed N for {self.pipeline}, got T={self.T}, N={self.N}")
        if self.B_g < 1 or self.B_G0 < 1:
            raise ExperimentConfigError("Batch sizes must be positive")
        if self.batch_growth not in ("constant", "logarithmic"):
            raise ExperimentConfigError(f"Unknown batch_growth: {self.batch_growth}")
        if not 0.5 < self.a < 1.0:
            raise ExperimentConfigError(f"a must lie in (0.5, 1), got {self.a}")
        if self.gamma0 is not None and self.gamma0 <= 0:
            raise ExperimentConfigError("gamma0 must be positive when given")
        if self.first_stage_weight not in ("identity", "instrument"):
            raise ExperimentConfigError(f"Unknown first_stage_weight: {self.first_stage_weight}")
        if self.s0 <= 0:
            raise ExperimentConfigError("s0 must be positive")
        if set(self.refine) - REFINE_KEYS:
            raise ExperimentConfigError(f"Unknown refine keys: {sorted(set(self.refine) - REFINE_KEYS)}")
        if self.refine["weight_mode"] not in ("minibatch", "fullsample"):
            raise ExperimentConfigError(f"Unknown refine.weight_mode: {self.refine['weight_mode']}")
        if self.refine["structure"] not in (None, "none", "kronecker-diagonal"):
            raise ExperimentConfigError(f"Unknown refine.structure: {self.refine['structure']}")
        for method in self.inference:
            if method not in INFERENCE_METHODS:
                raise ExperimentConfigError(f"Unknown inference method: {method}")
        if "plugin" in self.inference and not self.refined:
            raise ExperimentConfigError("Plug-in inference needs a refinement pipeline")
        for variant in self.jtests:
            if variant not in JTEST_VARIANTS:
                raise ExperimentConfigError(f"Unknown J-test variant: {variant}")
        if self.jtests and not self.refined:
            raise ExperimentConfigError("J-tests need a refinement pipeline")
        if self.rs_mode not in ("sampling", "fixed"):
            raise ExperimentConfigError(f"Unknown rs_mode: {self.rs_mode}")
        if not 0.0 < self.alpha < 1.0:
            raise ExperimentConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.hypotheses:
            raise ExperimentConfigError("At least one hypothesis target is required")
        if self.parallel_workers < 1:
            raise ExperimentConfigError("parallel_workers must be >= 1")
        if self.trace_stride < 0:
            raise ExperimentConfigError("trace_stride must be >= 0")
        if len(self.rimse_domain) != 2 or self.rimse_domain[0] >= self.rimse_domain[1]:
            raise ExperimentConfigError("rimse_domain must be [low, high] with low < high")
        if self.warm_start is not None:
            try:
                WarmStartConfig.from_dict(self.warm_start)
            except (ScheduleError, TypeError, ValueError) as e:
                raise ExperimentConfigError(f"Invalid warm_start: {e}") from e
