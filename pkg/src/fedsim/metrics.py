"""IoU, held-out evaluation and convergence statistics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import BoundingBox, Scene, scene_features, scene_targets
from .errors import DimensionError, ProtocolError
from .models import ModelKind, ModelSpec, forward, loss_and_grad_arrays, targets_for


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area; 0 when the boxes do not overlap."""
    for box in (a, b):
        if not isinstance(box, BoundingBox):
            raise DimensionError(f"expected a BoundingBox, got {type(box).__name__}")
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise IoU of two ``(n, 4)`` arrays of ``(x_min, y_min, x_max, y_max)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 4:
        raise DimensionError(f"expected matching (n, 4) arrays, got {a.shape} and {b.shape}")
    iw = np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0])
    ih = np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a + area_b - inter)


@dataclass(frozen=True)
class EvalReport:
    mean_iou: float
    per_scene_iou: tuple[float, ...] = field(repr=False)
    n_scenes: int

    @classmethod
    def from_ious(cls, ious: Sequence[float]) -> "EvalReport":
        ious = tuple(float(v) for v in ious)
        if not ious:
            raise ProtocolError("evaluation over an empty test set")
        return cls(float(np.mean(ious)), ious, len(ious))


def evaluate_boxes(pred: Sequence[BoundingBox], truth: Sequence[BoundingBox]) -> EvalReport:
    if len(pred) != len(truth):
        raise DimensionError(f"{len(pred)} predictions for {len(truth)} ground-truth boxes")
    return EvalReport.from_ious([iou(p, t) for p, t in zip(pred, truth)])


def _clipped_corners(out: np.ndarray) -> np.ndarray:
    # vectorised twin of models.outputs_to_box
    cx, cy, w, h = out.T
    boxes = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)
    return np.clip(boxes, 0.0, 1.0)


def evaluate_model(spec: ModelSpec, params, test_scenes: Sequence[Scene]) -> EvalReport:
    """Per-scene IoU of the model's predicted box against the truth box."""
    if spec.kind is not ModelKind.BOX_REGRESSOR:
        raise ValueError("IoU evaluation needs a box regressor")
    if not test_scenes:
        raise ProtocolError("evaluation over an empty test set")
    pred = _clipped_corners(forward(spec, params, scene_features(test_scenes)))
    truth = np.stack([s.truth_box.as_array() for s in test_scenes])
    return EvalReport.from_ious(iou_arrays(pred, truth))


def global_metric(spec: ModelSpec, params, test_scenes: Sequence[Scene]) -> float:
    """Mean IoU for box regressors, mean squared error for linear regression."""
    if spec.kind is ModelKind.BOX_REGRESSOR:
        return evaluate_model(spec, params, test_scenes).mean_iou
    if not test_scenes:
        raise ProtocolError("evaluation over an empty test set")
    X = scene_features(test_scenes)
    return loss_and_grad_arrays(spec, params, X, targets_for(spec, scene_targets(test_scenes)))[0]


def higher_is_better(spec: ModelSpec) -> bool:
    return spec.kind is ModelKind.BOX_REGRESSOR


def convergence_stats(records) -> tuple[float, int, float]:
    """``(max_metric, argmax_round, max_drawdown)`` of a per-round metric series.

    ``records`` may be RoundRecords or plain numbers (round t is position t, 1-based).
    Drawdown is the largest drop below the best value seen in earlier rounds;
    ties for the maximum resolve to the earliest round.
    """
    values = [getattr(r, "global_metric", r) for r in records]
    if not values:
        raise ProtocolError("convergence_stats needs at least one round")
    rounds = [getattr(r, "round_index", i) for i, r in enumerate(records, 1)]
    best = values[0]
    best_round = rounds[0]
    drawdown = 0.0
    for t in range(1, len(values)):
        drawdown = max(drawdown, best - values[t])
        if values[t] > best:
            best, best_round = values[t], rounds[t]
    return float(best), int(best_round), float(drawdown)
