"""Synchronous federated round loop and the centralized baseline.

Server-side functions (``server_aggregate``, ``server_evaluate``) only ever
receive ClientUpdates and the server-held test split; training shards stay
on the client side of ``run_round``.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .aggregation import DEFAULT_BETA, DEFAULT_SERVER_LR, FedAvgMState, aggregate
from .data import (DataConfig, PartitionScheme, Scene, Shard, augment_dataset, dataset_hash,
                   generate_dataset, partition, train_test_split)
from .errors import ClientError, ConfigError
from .metrics import global_metric
from .models import ModelSpec, TrainConfig, init_params, local_train, with_seed
from .params import ClientUpdate, ParamVector, RoundRecord, StrategyTag, as_params

_SAMPLER_TAG = 0x5A3


@dataclass(frozen=True)
class ExperimentConfig:
    n_clients: int = 5
    rounds: int = 7
    client_fraction: float = 1.0
    strategy: StrategyTag = StrategyTag.FEDAVG
    beta: float = DEFAULT_BETA
    server_lr: float = DEFAULT_SERVER_LR
    partition_scheme: PartitionScheme = PartitionScheme.REGION_DIRICHLET
    alpha: float = 0.5
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.strategy, str):
            object.__setattr__(self, "strategy", StrategyTag.parse(self.strategy))
        if isinstance(self.partition_scheme, str):
            object.__setattr__(self, "partition_scheme", PartitionScheme.parse(self.partition_scheme))

    def validate(self) -> None:
        if self.n_clients < 1:
            raise ConfigError(f"n_clients must be >= 1, got {self.n_clients}")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if not 0.0 < self.client_fraction <= 1.0:
            raise ConfigError(f"client_fraction must lie in (0, 1], got {self.client_fraction}")
        if self.strategy is StrategyTag.CENTRALIZED:
            raise ConfigError("strategy must be fedavg or fedavgm")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"beta must lie in [0, 1), got {self.beta}")
        if not self.server_lr > 0:
            raise ConfigError(f"server_lr must be > 0, got {self.server_lr}")
        if self.partition_scheme is PartitionScheme.REGION_DIRICHLET and not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.data.validate()
        if self.model.d_in != self.data.d_in:
            raise ConfigError(f"model d_in {self.model.d_in} != data d_in {self.data.d_in}")
        n_train = self.data.n_scenes * (1 + self.data.augment_copies)
        n_train -= _n_test(self.data.n_scenes, self.data.test_fraction)
        if self.n_clients > n_train:
            raise ConfigError(f"{self.n_clients} clients but only {n_train} training scenes")


def _n_test(n: int, fraction: float) -> int:
    return min(max(1, int(math.floor(fraction * n + 0.5))), n - 1)


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    records: tuple[RoundRecord, ...]
    final_global: ParamVector
    final_metric: float
    total_wall_seconds: float
    dataset_hash: str = ""


@dataclass(frozen=True, eq=False)
class PreparedData:
    train: list[Scene]
    test: list[Scene]
    shards: list[Shard]
    dataset_hash: str


def sample_size(n_clients: int, fraction: float) -> int:
    return max(1, int(math.floor(fraction * n_clients + 0.5)))


def sample_clients(n_clients: int, fraction: float, round_index: int, seed: int) -> tuple[int, ...]:
    """Seeded uniform draw without replacement of ``max(1, round_half_up(fraction * n))`` clients."""
    k = sample_size(n_clients, fraction)
    if k >= n_clients:
        return tuple(range(n_clients))
    rng = np.random.default_rng([seed, round_index, _SAMPLER_TAG])
    return tuple(sorted(int(c) for c in rng.choice(n_clients, size=k, replace=False)))


def client_seed(seed: int, round_index: int, client_id: int) -> int:
    return int(np.random.SeedSequence([seed, round_index, client_id]).generate_state(1)[0])


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    d = cfg.data
    scenes = generate_dataset(d.n_scenes, d.d_in, d.regions, d.noise_sigma, cfg.seed)
    digest = dataset_hash(scenes)
    train, test = train_test_split(scenes, d.test_fraction, cfg.seed)
    train = augment_dataset(train, d.augment_copies, d.max_rotation_deg, cfg.seed)
    shards = partition(train, cfg.n_clients, cfg.partition_scheme, cfg.alpha, cfg.seed)
    return PreparedData(train, test, shards, digest)


def initial_state(cfg: ExperimentConfig, length: int) -> FedAvgMState | None:
    if cfg.strategy is StrategyTag.FEDAVGM:
        return FedAvgMState.zeros(length, cfg.beta, cfg.server_lr)
    return None


def server_aggregate(strategy: StrategyTag, global_params, updates: Sequence[ClientUpdate], state):
    return aggregate(strategy, global_params, updates, state)


def server_evaluate(spec: ModelSpec, params, test_scenes: Sequence[Scene]) -> float:
    return global_metric(spec, params, test_scenes)


def _train_one(spec, global_params, shard, train_cfg):
    try:
        return local_train(spec, global_params, shard, train_cfg)
    except Exception as exc:
        raise ClientError(shard.client_id, exc) from exc


def run_round(global_params, shards: Sequence[Shard], cfg: ExperimentConfig, strategy_state,
              round_index: int, test_scenes: Sequence[Scene], executor=None):
    """Activate, train, aggregate, evaluate. Returns ``(new_global, new_state, record)``.

    ``executor`` (any ``concurrent.futures`` executor) fans out local training;
    results are joined and reduced in ascending client_id order either way.
    """
    start = time.perf_counter()
    global_params = as_params(global_params)
    by_id = {s.client_id: s for s in shards}
    if sorted(by_id) != list(range(cfg.n_clients)):
        raise ConfigError(f"shards must cover client ids 0..{cfg.n_clients - 1}")
    active = sample_clients(cfg.n_clients, cfg.client_fraction, round_index, cfg.seed)
    jobs = [(cfg.model, global_params, by_id[c], with_seed(cfg.train, client_seed(cfg.seed, round_index, c)))
            for c in active]
    if executor is None:
        updates = [_train_one(*job) for job in jobs]
    else:
        updates = list(executor.map(lambda job: _train_one(*job), jobs))
    new_global, new_state = server_aggregate(cfg.strategy, global_params, updates, strategy_state)
    metric = server_evaluate(cfg.model, new_global, test_scenes)
    record = RoundRecord(round_index, active, metric, time.perf_counter() - start, cfg.strategy)
    return new_global, new_state, record


def run_experiment(cfg: ExperimentConfig, data: PreparedData | None = None) -> ExperimentResult:
    cfg.validate()
    start = time.perf_counter()
    data = data or prepare_data(cfg)
    params = init_params(cfg.model, cfg.seed)
    state = initial_state(cfg, cfg.model.param_count)
    records = []
    executor = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for t in range(1, cfg.rounds + 1):
            params, state, rec = run_round(params, data.shards, cfg, state, t, data.test, executor)
            records.append(rec)
    finally:
        if executor is not None:
            executor.shutdown()
    return ExperimentResult(tuple(records), params, records[-1].global_metric,
                            time.perf_counter() - start, data.dataset_hash)


def run_centralized(cfg: ExperimentConfig, data: PreparedData | None = None) -> ExperimentResult:
    """Train one model on the union of all shards for ``rounds * local_epochs`` epochs.

    Epochs are grouped into blocks of ``local_epochs``; block t shuffles with the
    same seed client 0 uses in federated round t, and is evaluated as "round" t.
    """
    cfg.validate()
    start = time.perf_counter()
    data = data or prepare_data(cfg)
    union = Shard(0, [s for shard in data.shards for s in shard.scenes])
    everyone = tuple(range(cfg.n_clients))
    params = init_params(cfg.model, cfg.seed)
    records = []
    for t in range(1, cfg.rounds + 1):
        t0 = time.perf_counter()
        params = local_train(cfg.model, params, union, with_seed(cfg.train, client_seed(cfg.seed, t, 0))).params
        metric = server_evaluate(cfg.model, params, data.test)
        records.append(RoundRecord(t, everyone, metric, time.perf_counter() - t0, StrategyTag.CENTRALIZED))
    return ExperimentResult(tuple(records), params, records[-1].global_metric,
                            time.perf_counter() - start, data.dataset_hash)
