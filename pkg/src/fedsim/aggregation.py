"""Server-side aggregation: FedAvg and FedAvgM as pure state transitions.

Sign convention: the per-client pseudo-gradient is ``global - client`` so that
subtracting its sample-weighted mean from the global model lands exactly on the
sample-weighted mean of the client models.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DimensionError, ProtocolError
from .params import ClientUpdate, ParamVector, StrategyTag, as_params, vec_weighted_sum

DEFAULT_BETA = 0.9
DEFAULT_SERVER_LR = 1.0


@dataclass(frozen=True, eq=False)
class FedAvgMState:
    velocity: ParamVector
    beta: float = DEFAULT_BETA
    server_lr: float = DEFAULT_SERVER_LR

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if not self.server_lr > 0.0:
            raise ValueError(f"server_lr must be > 0, got {self.server_lr}")
        object.__setattr__(self, "velocity", as_params(self.velocity))

    @classmethod
    def zeros(cls, length: int, beta: float = DEFAULT_BETA, server_lr: float = DEFAULT_SERVER_LR):
        return cls(np.zeros(length), beta, server_lr)


@dataclass(frozen=True, eq=False)
class AggregatedDelta:
    delta: ParamVector
    total_samples: int


def _sorted_updates(global_params: np.ndarray, updates: Sequence[ClientUpdate]) -> list[ClientUpdate]:
    if not updates:
        raise ProtocolError("cannot aggregate an empty list of client updates")
    ordered = sorted(updates, key=lambda u: u.client_id)
    for prev, cur in zip(ordered, ordered[1:]):
        if prev.client_id == cur.client_id:
            raise ProtocolError(f"duplicate update from client {cur.client_id}")
    for u in ordered:
        if u.params.shape != global_params.shape:
            raise DimensionError(
                f"client {u.client_id} sent {u.params.shape[0]} params, expected {global_params.shape[0]}"
            )
    return ordered


def pseudo_gradient(global_params, updates: Sequence[ClientUpdate]) -> AggregatedDelta:
    """Sample-weighted mean of ``global - w_k`` over the participating clients."""
    global_params = as_params(global_params)
    ordered = _sorted_updates(global_params, updates)
    total = sum(u.num_samples for u in ordered)
    delta = vec_weighted_sum((u.num_samples / total, global_params - u.params) for u in ordered)
    return AggregatedDelta(delta, total)


def fedavg_step(global_params, updates: Sequence[ClientUpdate]) -> ParamVector:
    """New global model = sample-weighted mean of the client models.

    Computed directly as the weighted mean (rather than ``global - delta``) so a
    single participating client is reproduced bit for bit.
    """
    global_params = as_params(global_params)
    ordered = _sorted_updates(global_params, updates)
    total = sum(u.num_samples for u in ordered)
    return vec_weighted_sum((u.num_samples / total, u.params) for u in ordered)


def fedavgm_step(global_params, updates: Sequence[ClientUpdate], state: FedAvgMState):
    """One FedAvgM round: ``v' = beta*v + (1-beta)*delta``, ``w' = w - lr*v'``.

    Returns ``(new_global, new_state)``; ``state`` is left untouched.
    """
    global_params = as_params(global_params)
    if state.velocity.shape != global_params.shape:
        raise DimensionError(
            f"velocity has length {state.velocity.shape[0]}, model has {global_params.shape[0]}"
        )
    delta = pseudo_gradient(global_params, updates).delta
    velocity = as_params(state.beta * state.velocity + (1.0 - state.beta) * delta, copy=False)
    new_global = as_params(global_params - state.server_lr * velocity, copy=False)
    return new_global, replace(state, velocity=velocity)


def aggregate(strategy: StrategyTag, global_params, updates, state: FedAvgMState | None = None):
    """Dispatch on ``strategy``; returns ``(new_global, new_state)``."""
    if strategy is StrategyTag.FEDAVG:
        return fedavg_step(global_params, updates), state
    if strategy is StrategyTag.FEDAVGM:
        if state is None:
            raise ProtocolError("FedAvgM needs a server state")
        return fedavgm_step(global_params, updates, state)
    raise ValueError(f"{strategy} is not a server aggregation strategy")
