"""Flat parameter vectors, client updates and per-round records.

Every model is flattened into a single float64 vector before it leaves a
client; aggregation never sees model structure.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, ProtocolError

ParamVector = np.ndarray


def check_finite(values: np.ndarray, what: str = "vector") -> None:
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{what} contains NaN or Inf")


def as_params(values, *, copy: bool = True) -> ParamVector:
    """Coerce ``values`` to a read-only 1-D float64 vector, validating it."""
    arr = np.array(values, dtype=np.float64, copy=copy)
    if arr.ndim != 1 or arr.size < 1:
        raise DimensionError(f"parameter vector must be 1-D and non-empty, got shape {arr.shape}")
    check_finite(arr, "parameter vector")
    arr.flags.writeable = False
    return arr


def vec_weighted_sum(terms: Iterable[tuple[float, np.ndarray]]) -> ParamVector:
    """Elementwise sum of ``weight * vector`` accumulated in the given order."""
    out = None
    for weight, vec in terms:
        vec = np.asarray(vec, dtype=np.float64)
        if not np.isfinite(weight):
            raise NumericError(f"non-finite weight {weight!r}")
        check_finite(vec)
        if out is None:
            if vec.ndim != 1 or vec.size < 1:
                raise DimensionError(f"expected a non-empty 1-D vector, got shape {vec.shape}")
            out = weight * vec
        else:
            if vec.shape != out.shape:
                raise DimensionError(f"length mismatch: {vec.shape[0]} vs {out.shape[0]}")
            out += weight * vec
    if out is None:
        raise ProtocolError("vec_weighted_sum needs at least one term")
    return as_params(out, copy=False)


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    """What a client sends back after local training: its new params and sample count."""

    client_id: int
    params: ParamVector
    num_samples: int
    local_loss: float = 0.0
    train_seconds: float = 0.0

    def __post_init__(self):
        if self.client_id < 0:
            raise ProtocolError(f"client_id must be >= 0, got {self.client_id}")
        if self.num_samples < 1:
            raise ProtocolError(f"client {self.client_id}: num_samples must be >= 1")
        object.__setattr__(self, "params", as_params(self.params))


class StrategyTag(str, enum.Enum):
    FEDAVG = "fedavg"
    FEDAVGM = "fedavgm"
    CENTRALIZED = "centralized"

    @classmethod
    def parse(cls, name: str) -> "StrategyTag":
        try:
            return cls(name.strip().lower())
        except ValueError:
            choices = ", ".join(t.value for t in cls)
            raise ValueError(f"unknown strategy {name!r} (expected one of: {choices})") from None


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    activated_clients: tuple[int, ...]
    global_metric: float
    wall_seconds: float
    strategy_tag: StrategyTag

    def __post_init__(self):
        if self.round_index < 1:
            raise ValueError("round_index starts at 1")
        if not self.activated_clients:
            raise ValueError("activated_clients must be non-empty")


def check_same_length(vectors: Sequence[np.ndarray], expected: int) -> None:
    for v in vectors:
        if v.shape != (expected,):
            raise DimensionError(f"expected length {expected}, got shape {v.shape}")
