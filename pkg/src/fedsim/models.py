"""Desk-scale models and the client-side SGD loop.

Flatten layout (row-major, bias in the last column of each layer):

* linear regression: ``[w_1 .. w_d, b]`` predicting the box center x
* box regressor, ``hidden == 0``: one ``(4, d_in + 1)`` layer
* box regressor, ``hidden > 0``: ``(hidden, d_in + 1)`` tanh layer, then ``(4, hidden + 1)``

Box outputs ``z`` are squashed to ``cx = sigmoid(z0)``, ``cy = sigmoid(z1)``,
``w = sigmoid(z2) * (1 - MIN_SIDE) + MIN_SIDE`` and likewise for ``h``.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, replace

import numpy as np

from .data import MIN_SIDE, BoundingBox, Scene, Shard, scene_features, scene_targets
from .errors import ConfigError, DimensionError, ProtocolError
from .params import ClientUpdate, as_params, check_finite


class ModelKind(str, enum.Enum):
    LINEAR_REGRESSION = "linear_regression"
    BOX_REGRESSOR = "box_regressor"

    @classmethod
    def parse(cls, name: str) -> "ModelKind":
        key = name.strip().lower().replace("-", "_")
        aliases = {"linearregression": "linear_regression", "linear": "linear_regression",
                   "boxregressor": "box_regressor", "box": "box_regressor"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown model kind {name!r}") from None


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind = ModelKind.BOX_REGRESSOR
    d_in: int = 8
    hidden: int = 16

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", ModelKind.parse(self.kind))
        if self.d_in < 1:
            raise ConfigError(f"d_in must be >= 1, got {self.d_in}")
        if self.hidden < 0:
            raise ConfigError(f"hidden must be >= 0, got {self.hidden}")

    @property
    def param_count(self) -> int:
        if self.kind is ModelKind.LINEAR_REGRESSION:
            return self.d_in + 1
        if self.hidden > 0:
            return (self.d_in + 1) * self.hidden + (self.hidden + 1) * 4
        return (self.d_in + 1) * 4

    def layers(self, params: np.ndarray) -> list[np.ndarray]:
        """Views of ``params`` as weight matrices (bias in the last column)."""
        if params.shape != (self.param_count,):
            raise DimensionError(f"{self.kind.value} expects {self.param_count} params, got {params.shape}")
        if self.kind is ModelKind.LINEAR_REGRESSION:
            return [params.reshape(1, self.d_in + 1)]
        if self.hidden == 0:
            return [params.reshape(4, self.d_in + 1)]
        split = (self.d_in + 1) * self.hidden
        return [params[:split].reshape(self.hidden, self.d_in + 1),
                params[split:].reshape(4, self.hidden + 1)]


@dataclass(frozen=True)
class TrainConfig:
    local_epochs: int = 5
    batch_size: int = 32
    lr: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.local_epochs < 0:
            raise ConfigError("local_epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")


HIDDEN_INIT_SCALE = 0.5


def init_params(spec: ModelSpec, seed: int = 0) -> np.ndarray:
    """Zeros, except the hidden layer's weights (small seeded uniform) to break symmetry."""
    params = np.zeros(spec.param_count)
    if spec.kind is ModelKind.BOX_REGRESSOR and spec.hidden > 0:
        rng = np.random.default_rng([seed, 0x1417])
        first = params[: (spec.d_in + 1) * spec.hidden].reshape(spec.hidden, spec.d_in + 1)
        first[:, :-1] = rng.uniform(-1, 1, size=(spec.hidden, spec.d_in)) * HIDDEN_INIT_SCALE / np.sqrt(spec.d_in)
    return as_params(params, copy=False)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _affine(W, X):
    return X @ W[:, :-1].T + W[:, -1]


def forward(spec: ModelSpec, params: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Batched outputs: ``(n,)`` for linear regression, ``(n, 4)`` (cx, cy, w, h) for boxes."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.d_in:
        raise DimensionError(f"expected features of shape (n, {spec.d_in}), got {X.shape}")
    layers = spec.layers(np.asarray(params, dtype=np.float64))
    if spec.kind is ModelKind.LINEAR_REGRESSION:
        return _affine(layers[0], X)[:, 0]
    if len(layers) == 2:
        X = np.tanh(_affine(layers[0], X))
    return _squash(_affine(layers[-1], X))


def _squash(z):
    s = _sigmoid(z)
    out = s.copy()
    out[:, 2:] = s[:, 2:] * (1.0 - MIN_SIDE) + MIN_SIDE
    return out


def predict(spec: ModelSpec, params, features):
    """Single-scene prediction: a float (linear regression) or a valid in-frame box."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape != (spec.d_in,):
        raise DimensionError(f"expected {spec.d_in} features, got shape {feats.shape}")
    out = forward(spec, as_params(params), feats[None, :])[0]
    if spec.kind is ModelKind.LINEAR_REGRESSION:
        return float(out)
    return outputs_to_box(out)


def outputs_to_box(out) -> BoundingBox:
    # centers lie in [0, 1] and sides are positive, so clipping never empties a box
    cx, cy, w, h = (float(v) for v in out)
    return BoundingBox(max(cx - w / 2, 0.0), max(cy - h / 2, 0.0),
                       min(cx + w / 2, 1.0), min(cy + h / 2, 1.0))


def targets_for(spec: ModelSpec, targets: np.ndarray) -> np.ndarray:
    """Linear regression learns the box center x; the box regressor all four of (cx, cy, w, h)."""
    return targets[:, 0] if spec.kind is ModelKind.LINEAR_REGRESSION else targets


def loss_and_grad_arrays(spec: ModelSpec, params, X, Y) -> tuple[float, np.ndarray]:
    """Mean over examples of the squared error, and its exact gradient.

    For boxes the per-example error is summed over the four (cx, cy, w, h) outputs.
    """
    params = np.asarray(params, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise ProtocolError("loss over an empty batch")
    layers = spec.layers(params)
    grad = np.zeros_like(params)
    glayers = spec.layers(grad)

    if spec.kind is ModelKind.LINEAR_REGRESSION:
        resid = _affine(layers[0], X)[:, 0] - Y
        loss = float(np.mean(resid ** 2))
        d = (2.0 / n) * resid
        glayers[0][0, :-1] = d @ X
        glayers[0][0, -1] = d.sum()
        return loss, grad

    if len(layers) == 2:
        H = np.tanh(_affine(layers[0], X))
        inp = H
    else:
        inp = X
    z = _affine(layers[-1], inp)
    s = _sigmoid(z)
    out = s.copy()
    out[:, 2:] = s[:, 2:] * (1.0 - MIN_SIDE) + MIN_SIDE
    resid = out - Y
    loss = float(np.sum(resid ** 2) / n)

    dz = (2.0 / n) * resid * s * (1.0 - s)
    dz[:, 2:] *= 1.0 - MIN_SIDE
    glayers[-1][:, :-1] = dz.T @ inp
    glayers[-1][:, -1] = dz.sum(axis=0)
    if len(layers) == 2:
        dh = (dz @ layers[1][:, :-1]) * (1.0 - H ** 2)
        glayers[0][:, :-1] = dh.T @ X
        glayers[0][:, -1] = dh.sum(axis=0)
    return loss, grad


def loss_and_grad(spec: ModelSpec, params, batch: list[Scene]) -> tuple[float, np.ndarray]:
    if not batch:
        raise ProtocolError("loss over an empty batch")
    X = scene_features(batch)
    Y = targets_for(spec, scene_targets(batch))
    return loss_and_grad_arrays(spec, params, X, Y)


def sgd_epochs(spec: ModelSpec, params: np.ndarray, X: np.ndarray, Y: np.ndarray,
               cfg: TrainConfig) -> tuple[np.ndarray, float]:
    """Run ``cfg.local_epochs`` epochs of shuffled mini-batch SGD from ``params``.

    Returns the new params and the sample-weighted mean batch loss of the last
    epoch (or the loss at ``params`` when no epochs are run).
    """
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    w = np.array(params, dtype=np.float64)
    if cfg.local_epochs == 0:
        return w, loss_and_grad_arrays(spec, w, X, Y)[0]
    last = 0.0
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, g = loss_and_grad_arrays(spec, w, X[idx], Y[idx])
            w -= cfg.lr * g
            total += loss * len(idx)
        last = total / n
    check_finite(w, "trained parameters")
    return w, last


def local_train(spec: ModelSpec, global_params, shard: Shard, cfg: TrainConfig) -> ClientUpdate:
    """Train a copy of the global model on one shard and package the result."""
    if len(shard) == 0:
        raise ProtocolError(f"client {shard.client_id} has an empty shard")
    start = time.perf_counter()
    w, last = sgd_epochs(spec, as_params(global_params), shard.features,
                         targets_for(spec, shard.targets), cfg)
    return ClientUpdate(shard.client_id, w, len(shard), local_loss=last,
                        train_seconds=time.perf_counter() - start)


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)
