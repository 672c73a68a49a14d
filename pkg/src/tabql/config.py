"""Experiment configuration: flat key=value files with per-environment defaults.

A config file is UTF-8 ``key=value`` lines with ``#`` comments. Environment
defaults are applied first, then the file's entries, then any command-line
overrides, so a file only needs to state what differs. Every run writes the
fully resolved mapping back out as a sidecar; re-running from the sidecar
reproduces the run byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .engine import GateConfig, RefitConfig
from .qnet import SgdConfig
from .regressors import RegressorKind

ENV_CHOICES = ("cliffwalking", "frozenlake4", "frozenlake8", "taxi", "cartpole", "twostate")
ALGO_CHOICES = ("tabql", "tabular_q", "dqn", "fqi")


class ConfigError(ValueError):
    """Carries one message per offending field."""

    def __init__(self, errors: dict):
        self.errors = dict(errors)
        super().__init__("; ".join(f"{k}: {v}" for k, v in sorted(self.errors.items())))


@dataclass
class ExperimentConfig:
    env_id: str = "cliffwalking"
    algo: str = "tabql"
    gamma: float = 0.99
    total_steps: int = 30000
    seeds: tuple = (0, 1, 2, 3, 4)
    context_k: int = 1000
    buffer_w: int = 50000
    strategy: str = "recent"
    slippery: bool = False
    include_initial_tag: bool = False
    ledger: bool = False
    m_min: int = 1
    gate: GateConfig = field(default_factory=GateConfig)
    refit: RefitConfig = field(default_factory=RefitConfig)
    regressor: RegressorKind = field(default_factory=RegressorKind)
    sgd: SgdConfig = field(default_factory=SgdConfig)
    hidden: tuple = (64, 64)
    filter_tau: Optional[float] = None
    filter_theta: Optional[float] = None
    tabular_alpha: float = 0.1
    fqi_iterations: int = 50
    final_window: int = 50
    output_path: str = "results/run.csv"

    @property
    def t0(self) -> int:
        return self.gate.T0


# keys of the flat format, in sidecar order
FLAT_KEYS = (
    "env", "algo", "gamma", "total_steps", "seeds", "t0", "context_k", "buffer_w",
    "strategy", "slippery", "include_initial_tag", "ledger", "m_min",
    "gate_window", "gate_gmin", "gate_q", "gate_theta_floor", "gate_delta", "gate_adaptive",
    "refit_mode", "refit_rho_stale", "refit_e_min",
    "regressor", "knn_k", "kernel_bandwidth", "bridge_endpoint",
    "lr", "batch_size", "target_sync", "eps_start", "eps_end", "eps_decay_steps", "hidden",
    "filter_tau", "filter_theta", "tabular_alpha", "fqi_iterations", "final_window",
    "output",
)

BASE_DEFAULTS = {
    "env": "cliffwalking",
    "algo": "tabql",
    "gamma": "0.99",
    "total_steps": "30000",
    "seeds": "0,1,2,3,4",
    "t0": "20000",
    "context_k": "1000",
    "buffer_w": "50000",
    "strategy": "recent",
    "slippery": "false",
    "include_initial_tag": "false",
    "ledger": "false",
    "m_min": "1",
    "gate_window": "30",
    "gate_gmin": "20",
    "gate_q": "0.5",
    "gate_theta_floor": "-inf",
    "gate_delta": "1.0",
    "gate_adaptive": "false",
    "refit_mode": "episode",
    "refit_rho_stale": "0.25",
    "refit_e_min": "1",
    "regressor": "knn",
    "knn_k": "8",
    "kernel_bandwidth": "1.0",
    "bridge_endpoint": "",
    "lr": "0.01",
    "batch_size": "32",
    "target_sync": "500",
    "eps_start": "1.0",
    "eps_end": "0.01",
    "eps_decay_steps": "10000",
    "hidden": "64,64",
    "filter_tau": "none",
    "filter_theta": "none",
    "tabular_alpha": "0.1",
    "fqi_iterations": "50",
    "final_window": "50",
    "output": "results/run.csv",
}

ENV_DEFAULTS = {
    "cliffwalking": {
        "t0": "20000", "context_k": "1000", "total_steps": "30000",
        "buffer_w": "50000", "eps_decay_steps": "12000", "eps_end": "0.0",
        "lr": "0.003", "batch_size": "64", "target_sync": "250", "knn_k": "4",
    },
    "frozenlake4": {
        "t0": "30000", "context_k": "1500", "total_steps": "35000",
        "buffer_w": "10000", "eps_decay_steps": "2000", "eps_end": "0.01",
        "lr": "0.2", "batch_size": "64", "target_sync": "100", "gamma": "0.99",
    },
    "frozenlake8": {
        "t0": "30000", "context_k": "1500", "total_steps": "35000",
        "buffer_w": "10000", "eps_decay_steps": "8000", "eps_end": "0.01",
        "lr": "0.2", "batch_size": "64", "target_sync": "100",
    },
    "taxi": {
        "t0": "25000", "context_k": "1000", "total_steps": "35000",
        "buffer_w": "50000", "eps_decay_steps": "15000", "eps_end": "0.01",
        "lr": "0.05",
    },
    "cartpole": {
        "t0": "20000", "context_k": "1000", "total_steps": "30000",
        "buffer_w": "50000", "gate_adaptive": "true", "gate_q": "0.5",
        "gate_theta_floor": "15", "refit_mode": "adaptive", "filter_tau": "0.1",
        "lr": "0.01", "eps_decay_steps": "10000",
    },
    "twostate": {
        "t0": "600", "context_k": "256", "total_steps": "2500",
        "buffer_w": "5000", "eps_decay_steps": "800", "eps_end": "0.05",
        "hidden": "16,16", "lr": "0.05", "batch_size": "16", "target_sync": "100",
        "knn_k": "4", "final_window": "10",
    },
}


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int_tuple(raw: str) -> tuple:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(int(v) for v in raw.split(","))


def _parse_opt_float(raw: str) -> Optional[float]:
    low = raw.strip().lower()
    if low in ("none", ""):
        return None
    return float(raw)


def read_flat_file(path: str) -> dict:
    """Parse one key=value file; later duplicate keys win."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError({f"line {lineno}": f"expected key=value, got {stripped!r}"})
            key, value = stripped.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def resolve_mapping(file_mapping: Optional[dict] = None, overrides: Optional[dict] = None) -> dict:
    """Layer defaults, environment defaults, file values, and overrides."""
    file_mapping = dict(file_mapping or {})
    overrides = dict(overrides or {})
    env_id = overrides.get("env", file_mapping.get("env", BASE_DEFAULTS["env"]))
    mapping = dict(BASE_DEFAULTS)
    mapping.update(ENV_DEFAULTS.get(env_id, {}))
    mapping.update(file_mapping)
    mapping.update(overrides)
    return mapping


def build_config(mapping: dict) -> ExperimentConfig:
    """Typed config from a fully resolved flat mapping; all errors reported."""
    errors = {}
    unknown = set(mapping) - set(FLAT_KEYS)
    for key in sorted(unknown):
        errors[key] = "unknown key"

    values = {}

    def take(key, parser, check=None, message=None):
        if key in errors:
            return
        try:
            v = parser(mapping[key])
        except (ValueError, KeyError) as exc:
            errors[key] = str(exc)
            return
        if check is not None and not check(v):
            errors[key] = message or "invalid value"
            return
        values[key] = v

    take("env", str, lambda v: v in ENV_CHOICES, f"must be one of {ENV_CHOICES}")
    take("algo", str, lambda v: v in ALGO_CHOICES, f"must be one of {ALGO_CHOICES}")
    take("gamma", float, lambda v: 0.0 < v < 1.0, "must lie strictly inside (0,1)")
    take("total_steps", int, lambda v: v >= 1, "must be >= 1")
    take("seeds", _parse_int_tuple, lambda v: len(v) >= 1, "must list at least one seed")
    take("t0", int, lambda v: v >= 0, "must be >= 0")
    take("context_k", int, lambda v: v >= 1, "must be >= 1")
    take("buffer_w", int, lambda v: v >= 1, "must be >= 1")
    take("strategy", str, lambda v: v in ("recent", "uniform"), "must be recent or uniform")
    take("slippery", _parse_bool)
    take("include_initial_tag", _parse_bool)
    take("ledger", _parse_bool)
    take("m_min", int, lambda v: v >= 1, "must be >= 1")
    take("gate_window", int, lambda v: v >= 1, "must be >= 1")
    take("gate_gmin", int, lambda v: v >= 1, "must be >= 1")
    take("gate_q", float, lambda v: 0.0 < v < 1.0, "must lie strictly inside (0,1)")
    take("gate_theta_floor", float)
    take("gate_delta", float)
    take("gate_adaptive", _parse_bool)
    take("refit_mode", str, lambda v: v in ("episode", "adaptive"), "must be episode or adaptive")
    take("refit_rho_stale", float, lambda v: 0.0 < v <= 1.0, "must lie in (0,1]")
    take("refit_e_min", int, lambda v: v >= 1, "must be >= 1")
    take("regressor", str, lambda v: v in ("knn", "kernel", "bridge", "exact_table"),
         "must be knn, kernel, bridge, or exact_table")
    take("knn_k", int, lambda v: v >= 1, "must be >= 1")
    take("kernel_bandwidth", float, lambda v: v > 0, "must be > 0")
    take("bridge_endpoint", str)
    take("lr", float, lambda v: v >= 0, "must be >= 0")
    take("batch_size", int, lambda v: v >= 1, "must be >= 1")
    take("target_sync", int, lambda v: v >= 1, "must be >= 1")
    take("eps_start", float, lambda v: 0.0 <= v <= 1.0, "must lie in [0,1]")
    take("eps_end", float, lambda v: 0.0 <= v <= 1.0, "must lie in [0,1]")
    take("eps_decay_steps", int, lambda v: v >= 1, "must be >= 1")
    take("hidden", _parse_int_tuple, lambda v: all(h >= 1 for h in v), "sizes must be >= 1")
    take("filter_tau", _parse_opt_float, lambda v: v is None or v >= 0, "must be >= 0")
    take("filter_theta", _parse_opt_float)
    take("tabular_alpha", float, lambda v: 0.0 <= v <= 1.0, "must lie in [0,1]")
    take("fqi_iterations", int, lambda v: v >= 0, "must be >= 0")
    take("final_window", int, lambda v: v >= 1, "must be >= 1")
    take("output", str, lambda v: bool(v), "must be nonempty")

    if not errors:
        if values["gate_gmin"] > values["gate_window"]:
            errors["gate_gmin"] = "must not exceed gate_window"
        if values["eps_end"] > values["eps_start"]:
            errors["eps_end"] = "must be <= eps_start"
        if len(set(values["seeds"])) != len(values["seeds"]):
            errors["seeds"] = "must be distinct"
    if errors:
        raise ConfigError(errors)

    return ExperimentConfig(
        env_id=values["env"],
        algo=values["algo"],
        gamma=values["gamma"],
        total_steps=values["total_steps"],
        seeds=values["seeds"],
        context_k=values["context_k"],
        buffer_w=values["buffer_w"],
        strategy=values["strategy"],
        slippery=values["slippery"],
        include_initial_tag=values["include_initial_tag"],
        ledger=values["ledger"],
        m_min=values["m_min"],
        gate=GateConfig(
            T0=values["t0"],
            window_W=values["gate_window"],
            G_min=values["gate_gmin"],
            quantile_q=values["gate_q"],
            theta_floor=values["gate_theta_floor"],
            delta_margin=values["gate_delta"],
            adaptive=values["gate_adaptive"],
        ),
        refit=RefitConfig(
            mode=values["refit_mode"],
            rho_stale=values["refit_rho_stale"],
            e_min=values["refit_e_min"],
        ),
        regressor=RegressorKind(
            kind=values["regressor"],
            knn_k=values["knn_k"],
            kernel_bandwidth=values["kernel_bandwidth"],
            bridge_endpoint=values["bridge_endpoint"],
        ),
        sgd=SgdConfig(
            learning_rate=values["lr"],
            batch_size=values["batch_size"],
            target_sync_period=values["target_sync"],
            eps_start=values["eps_start"],
            eps_end=values["eps_end"],
            eps_decay_steps=values["eps_decay_steps"],
        ),
        hidden=values["hidden"],
        filter_tau=values["filter_tau"],
        filter_theta=values["filter_theta"],
        tabular_alpha=values["tabular_alpha"],
        fqi_iterations=values["fqi_iterations"],
        final_window=values["final_window"],
        output_path=values["output"],
    )


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    mapping = resolve_mapping(read_flat_file(path) if path else {}, overrides)
    return build_config(mapping)


def to_flat(cfg: ExperimentConfig) -> dict:
    """Resolved mapping of a typed config, suitable for the sidecar file."""

    def fmt_float(v):
        return repr(float(v))

    def fmt_opt(v):
        return "none" if v is None else fmt_float(v)

    theta_floor = cfg.gate.theta_floor
    return {
        "env": cfg.env_id,
        "algo": cfg.algo,
        "gamma": fmt_float(cfg.gamma),
        "total_steps": str(cfg.total_steps),
        "seeds": ",".join(str(s) for s in cfg.seeds),
        "t0": str(cfg.gate.T0),
        "context_k": str(cfg.context_k),
        "buffer_w": str(cfg.buffer_w),
        "strategy": cfg.strategy,
        "slippery": str(cfg.slippery).lower(),
        "include_initial_tag": str(cfg.include_initial_tag).lower(),
        "ledger": str(cfg.ledger).lower(),
        "m_min": str(cfg.m_min),
        "gate_window": str(cfg.gate.window_W),
        "gate_gmin": str(cfg.gate.G_min),
        "gate_q": fmt_float(cfg.gate.quantile_q),
        "gate_theta_floor": "-inf" if theta_floor == -math.inf else fmt_float(theta_floor),
        "gate_delta": fmt_float(cfg.gate.delta_margin),
        "gate_adaptive": str(cfg.gate.adaptive).lower(),
        "refit_mode": cfg.refit.mode,
        "refit_rho_stale": fmt_float(cfg.refit.rho_stale),
        "refit_e_min": str(cfg.refit.e_min),
        "regressor": cfg.regressor.kind,
        "knn_k": str(cfg.regressor.knn_k),
        "kernel_bandwidth": fmt_float(cfg.regressor.kernel_bandwidth),
        "bridge_endpoint": cfg.regressor.bridge_endpoint,
        "lr": fmt_float(cfg.sgd.learning_rate),
        "batch_size": str(cfg.sgd.batch_size),
        "target_sync": str(cfg.sgd.target_sync_period),
        "eps_start": fmt_float(cfg.sgd.eps_start),
        "eps_end": fmt_float(cfg.sgd.eps_end),
        "eps_decay_steps": str(cfg.sgd.eps_decay_steps),
        "hidden": ",".join(str(h) for h in cfg.hidden),
        "filter_tau": fmt_opt(cfg.filter_tau),
        "filter_theta": fmt_opt(cfg.filter_theta),
        "tabular_alpha": fmt_float(cfg.tabular_alpha),
        "fqi_iterations": str(cfg.fqi_iterations),
        "final_window": str(cfg.final_window),
        "output": cfg.output_path,
    }


def write_sidecar(cfg: ExperimentConfig, path: str) -> None:
    flat = to_flat(cfg)
    with open(path, "w", encoding="utf-8") as fh:
        for key in FLAT_KEYS:
            fh.write(f"{key}={flat[key]}\n")
