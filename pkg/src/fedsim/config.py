"""Flat sectioned key-value config files.

::

    [experiment]
    n_clients = 5      # comments run to end of line
    rounds = 7
    strategy = fedavg

Unknown sections or keys are errors, and every diagnostic carries the
file name and line number. ``configparser`` is not used because it does
not track line numbers.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

from .data import DataConfig, PartitionScheme
from .errors import ConfigError
from .models import ModelKind, ModelSpec, TrainConfig
from .orchestrator import ExperimentConfig
from .params import StrategyTag


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> list[int]:
    return [int(p) for p in _str_list(text)]


def _str_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _fraction(text: str) -> float:
    return float(text)


# section -> key -> parser
SCHEMA: dict[str, dict[str, Callable[[str], object]]] = {
    "experiment": {
        "n_clients": int,
        "rounds": int,
        "client_fraction": _fraction,
        "strategy": lambda s: StrategyTag.parse(s).value,
        "beta": float,
        "server_lr": float,
        "seed": int,
        "workers": int,
        "mode": lambda s: _choice(s, ("federated", "centralized", "both")),
    },
    "data": {
        "n_scenes": int,
        "d_in": int,
        "regions": int,
        "noise_sigma": float,
        "test_fraction": float,
        "augment_copies": int,
        "max_rotation_deg": float,
        "partition": lambda s: PartitionScheme.parse(s).value,
        "alpha": float,
    },
    "model": {
        "kind": lambda s: ModelKind.parse(s).value,
        "hidden": int,
    },
    "train": {
        "local_epochs": int,
        "batch_size": int,
        "lr": float,
    },
    "grid": {
        "n_clients": _int_list,
        "strategies": lambda s: [StrategyTag.parse(p).value for p in _str_list(s)],
        "models": _str_list,
        "centralized": _bool,
    },
}

RUN_REQUIRED = ("experiment.n_clients", "experiment.rounds", "experiment.strategy")
GRID_REQUIRED = ("experiment.rounds", "grid.n_clients", "grid.strategies")


def _choice(text: str, options) -> str:
    low = text.strip().lower()
    if low not in options:
        raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
    return low


@dataclass
class ConfigFile:
    path: str
    values: dict[str, object] = field(default_factory=dict)
    lines: dict[str, int] = field(default_factory=dict)

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def require(self, keys) -> None:
        for key in keys:
            if key not in self.values:
                raise ConfigError(f"{self.path}: missing required field '{key}'")

    def error(self, key: str, message: str) -> ConfigError:
        line = self.lines.get(key)
        where = f"{self.path}:{line}" if line else self.path
        return ConfigError(f"{where}: {key}: {message}")

    def snapshot(self) -> list[tuple[str, str]]:
        out = []
        for key in sorted(self.values):
            v = self.values[key]
            out.append((key, ", ".join(map(str, v)) if isinstance(v, list) else str(v)))
        return out


def parse_config(text: str, path: str = "<config>") -> ConfigFile:
    cfg = ConfigFile(path)
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{path}:{lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip().lower()
            if section not in SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"{path}:{lineno}: key outside of any [section]")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.lower()
        if key not in SCHEMA[section]:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}' in [{section}]")
        full = f"{section}.{key}"
        if full in cfg.values:
            raise ConfigError(f"{path}:{lineno}: duplicate key '{full}' (first set on line {cfg.lines[full]})")
        try:
            cfg.values[full] = SCHEMA[section][key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for '{full}': {exc}") from None
        cfg.lines[full] = lineno
    return cfg


def load_config(path: str) -> ConfigFile:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, path)


def parse_model_entry(entry: str, default_hidden: int) -> ModelSpec:
    """``box_regressor`` or ``box_regressor:HIDDEN``; d_in is filled in later."""
    name, _, hidden = entry.partition(":")
    return ModelSpec(ModelKind.parse(name), hidden=int(hidden) if hidden else default_hidden)


def build_experiment(cf: ConfigFile, *, seed: int | None = None) -> ExperimentConfig:
    """Turn a parsed file into an ExperimentConfig, validating with line-precise errors."""
    g = cf.get
    data = DataConfig(
        n_scenes=g("data.n_scenes", DataConfig.n_scenes),
        d_in=g("data.d_in", DataConfig.d_in),
        regions=g("data.regions", DataConfig.regions),
        noise_sigma=g("data.noise_sigma", DataConfig.noise_sigma),
        test_fraction=g("data.test_fraction", DataConfig.test_fraction),
        augment_copies=g("data.augment_copies", DataConfig.augment_copies),
        max_rotation_deg=g("data.max_rotation_deg", DataConfig.max_rotation_deg),
    )
    try:
        model = ModelSpec(g("model.kind", ModelKind.BOX_REGRESSOR.value), data.d_in,
                          g("model.hidden", ModelSpec.hidden))
    except ConfigError as exc:
        raise cf.error("model.hidden", str(exc)) from None
    try:
        train = TrainConfig(g("train.local_epochs", TrainConfig.local_epochs),
                            g("train.batch_size", TrainConfig.batch_size),
                            g("train.lr", TrainConfig.lr))
    except ConfigError as exc:
        key = next((k for k in ("train.local_epochs", "train.batch_size", "train.lr")
                    if k.split(".")[1] in str(exc)), "train")
        raise cf.error(key, str(exc)) from None
    exp = ExperimentConfig(
        n_clients=g("experiment.n_clients", ExperimentConfig.n_clients),
        rounds=g("experiment.rounds", ExperimentConfig.rounds),
        client_fraction=g("experiment.client_fraction", ExperimentConfig.client_fraction),
        strategy=g("experiment.strategy", "fedavg"),
        beta=g("experiment.beta", ExperimentConfig.beta),
        server_lr=g("experiment.server_lr", ExperimentConfig.server_lr),
        partition_scheme=g("data.partition", PartitionScheme.REGION_DIRICHLET.value),
        alpha=g("data.alpha", ExperimentConfig.alpha),
        model=model,
        train=train,
        data=data,
        seed=g("experiment.seed", 0) if seed is None else seed,
        workers=g("experiment.workers", 1),
    )
    try:
        exp.validate()
    except ConfigError as exc:
        msg = str(exc)
        key = next((k for k in sorted(cf.lines, key=len, reverse=True) if k.split(".")[1] in msg), None)
        raise (cf.error(key, msg) if key else ConfigError(f"{cf.path}: {msg}")) from None
    return exp


def with_axes(exp: ExperimentConfig, *, n_clients: int, strategy: str, model: ModelSpec) -> ExperimentConfig:
    return replace(exp, n_clients=n_clients, strategy=StrategyTag.parse(strategy),
                   model=replace(model, d_in=exp.data.d_in))
