#!/usr/bin/env python3
"""
🔧 PIPELINE CONFIGURATION
=========================

Layered configuration for the portfolio pipeline.

Precedence (highest first):
    command-line flags > environment (PORTFOLIO_SEED, PORTFOLIO_OUTPUT_DIR)
    > JSON config file > built-in defaults

Features:
- Nested default configuration sized from system resources
- Recursive merge of user values over defaults
- Dotted-key overrides from the command line
- Validated PipelineConfig dataclass handed to every command

Author: Analog Portfolio Team
License: MIT
"""

import copy
import json
import os
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, Optional

import psutil
from dotenv import load_dotenv

from ep_autoencoder import EpConfig
from errors import PipelineError, UsageError
from hopfield_qp import AnnealSchedule, SolverOptions

METHODS = ("ep", "bp", "svd")
ENV_OVERRIDES = {
    "PORTFOLIO_SEED": ("seed", int),
    "PORTFOLIO_OUTPUT_DIR": ("output.dir", str),
}


def default_max_workers() -> int:
    """One sweep worker per CPU, between 1 and 8"""
    return max(1, min(8, psutil.cpu_count() or 1))


def get_default_config() -> Dict[str, Any]:
    return {
        "version": "1.0",
        "seed": 0,
        "data": {
            "input": None,
            "tickers": None,
        },
        "synth": {
            "n": 100,
            "N": 50,
            "r": 10,
            "noise_std": 0.1,
        },
        "factor": {
            "method": "svd",
            "rank": 10,
        },
        "solver": {
            "dt": 1e-2,
            "total_time": None,
            "p0": 0.01,
            "T": 100.0,
            "schedule": "linear",
            "lambda1": 1.0,
            "lambda2": 1.0,
            "stride": 100,
            "init_scale": 0.1,
        },
        "ep": {
            "beta": 1e-3,
            "eta": 0.002,
            "eta_decay": 0.02,
            "c": 10.0,
            "relax_dt": 0.05,
            "relax_steps": 2000,
            "relax_tol": 1e-10,
            "epochs": 200,
        },
        "bp": {
            "eta": None,
            "epochs": 1000,
        },
        "sweep": {
            "r_min": 0.0,
            "r_max": 1.0,
            "steps": 21,
            "warm_start": True,
            "max_workers": default_max_workers(),
        },
        "output": {
            "dir": "results",
        },
    }


def merge_configs(default: Dict, existing: Dict) -> Dict:
    """Recursively merge existing values over the defaults"""
    result = copy.deepcopy(default)

    for key, value in existing.items():
        if key in result and isinstance(value, dict) and isinstance(result[key], dict):
            result[key] = merge_configs(result[key], value)
        else:
            result[key] = value

    return result


def set_dotted(config: Dict[str, Any], dotted_key: str, value: Any):
    """Set config['a']['b'] for the key 'a.b'"""
    *parents, leaf = dotted_key.split(".")
    node = config
    for name in parents:
        node = node.setdefault(name, {})
    node[leaf] = value


def load_config_file(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise UsageError(f"config file {path} not found")
    try:
        with open(path, "r", encoding="utf-8") as f:
            config = json.load(f)
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(config, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return config


def save_config(config: Dict[str, Any], path: str):
    """Write a config with a last_updated stamp"""
    config = copy.deepcopy(config)
    config["last_updated"] = datetime.now().isoformat()
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(config, f, indent=2, ensure_ascii=False)
    except OSError as e:
        raise UsageError(f"cannot write config {path}: {e.strerror or e}") from e


def environment_overrides() -> Dict[str, Any]:
    load_dotenv()
    overrides = {}
    for variable, (dotted_key, cast) in ENV_OVERRIDES.items():
        raw = os.getenv(variable)
        if raw is None or raw.strip() == "":
            continue
        try:
            overrides[dotted_key] = cast(raw.strip())
        except ValueError as e:
            raise UsageError(f"{variable}={raw!r} is not a valid {cast.__name__}") from e
    return overrides


@dataclass
class PipelineConfig:
    """Validated settings for one pipeline command"""
    seed: int
    input: Optional[str]
    method: str
    rank: int
    synth: Dict[str, Any]
    solver: Dict[str, Any]
    ep: EpConfig
    bp: Dict[str, Any]
    sweep: Dict[str, Any]
    output_dir: str
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise UsageError(f"method must be one of {', '.join(METHODS)}, got '{self.method}'")
        if int(self.rank) < 1:
            raise UsageError(f"rank must be at least 1, got {self.rank}")
        if int(self.sweep["steps"]) < 2:
            raise UsageError(f"a frontier sweep needs steps >= 2, got {self.sweep['steps']}")
        if not float(self.sweep["r_min"]) < float(self.sweep["r_max"]):
            raise UsageError("sweep r_min must be smaller than r_max")
        if int(self.sweep["max_workers"]) < 1:
            raise UsageError("sweep max_workers must be at least 1")
        if self.method == "bp" and int(self.bp["epochs"]) < 1:
            raise UsageError("bp epochs must be at least 1")
        if self.method == "ep" and self.ep.epochs < 1:
            raise UsageError("ep epochs must be at least 1")

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "PipelineConfig":
        try:
            ep = EpConfig(seed=int(config["seed"]), **config["ep"])
            return cls(seed=int(config["seed"]), input=config["data"]["input"],
                       method=config["factor"]["method"], rank=int(config["factor"]["rank"]),
                       synth=dict(config["synth"]), solver=dict(config["solver"]), ep=ep,
                       bp=dict(config["bp"]), sweep=dict(config["sweep"]),
                       output_dir=str(config["output"]["dir"]), raw=copy.deepcopy(config))
        except PipelineError as e:
            raise UsageError(f"invalid configuration: {e}") from e
        except (KeyError, TypeError, ValueError) as e:
            raise UsageError(f"invalid configuration: {e!r}") from e

    def solver_options(self) -> SolverOptions:
        s = self.solver
        try:
            schedule = AnnealSchedule(p0=float(s["p0"]), T=float(s["T"]), shape=s["schedule"])
            return SolverOptions(dt=float(s["dt"]),
                                 total_time=None if s["total_time"] is None else float(s["total_time"]),
                                 schedule=schedule, init_scale=float(s["init_scale"]),
                                 seed=self.seed, stride=int(s["stride"]))
        except PipelineError as e:
            raise UsageError(f"invalid solver settings: {e}") from e

    def echo(self) -> Dict[str, Any]:
        """The merged configuration as written to the run manifest"""
        return copy.deepcopy(self.raw)


def load_pipeline_config(config_file: Optional[str] = None,
                         overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """
    Build the validated config: defaults <- file <- environment <- overrides

    Args:
        config_file: optional JSON config path
        overrides: dotted keys from command-line flags; None values are ignored
    """
    config = get_default_config()
    if config_file:
        config = merge_configs(config, load_config_file(config_file))
    for dotted_key, value in environment_overrides().items():
        set_dotted(config, dotted_key, value)
    for dotted_key, value in (overrides or {}).items():
        if value is not None:
            set_dotted(config, dotted_key, value)
    config.pop("last_updated", None)
    return PipelineConfig.from_dict(config)
