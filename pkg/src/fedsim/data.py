"""Synthetic single-box scenes, rotation augmentation and client partitioning.

Each scene stands in for one labelled image: a feature vector (scene
descriptor) and one axis-aligned ground-truth box in normalized coordinates.
Features ``x[0], x[1]`` act as the box-center position descriptor; the box
size depends on the remaining features through a region-specific affine map,
so the latent region label shifts both feature and box statistics.
"""
from __future__ import annotations

import enum
import functools
import hashlib
import io
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import ConfigError, DimensionError, FedSimError

MIN_SIDE = 1e-3

# generator geometry: centers stay in [0.3, 0.7], sides in [0.15, 0.35]
CENTER_GAIN = 0.2
SIZE_BASE = 0.25
SIZE_REGION_SPREAD = 0.04
SIZE_COEF_L1 = 0.06
CENTROID_SPREAD = 0.4
FEATURE_JITTER = 0.6


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise DimensionError(f"non-finite box coordinates {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise DimensionError(f"degenerate box {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max])

    def to_cxcywh(self) -> tuple[float, float, float, float]:
        return (
            (self.x_min + self.x_max) / 2,
            (self.y_min + self.y_max) / 2,
            self.width,
            self.height,
        )

    @classmethod
    def from_cxcywh(cls, cx, cy, w, h) -> "BoundingBox":
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    def within_unit(self) -> bool:
        return 0.0 <= self.x_min and 0.0 <= self.y_min and self.x_max <= 1.0 and self.y_max <= 1.0


def clip_box(x_min, y_min, x_max, y_max) -> BoundingBox:
    """Clip to the unit square, keeping at least ``MIN_SIDE`` on each side."""
    lo = []
    hi = []
    for a, b in ((x_min, x_max), (y_min, y_max)):
        a = min(max(a, 0.0), 1.0)
        b = min(max(b, 0.0), 1.0)
        if b - a < MIN_SIDE:
            mid = min(max((a + b) / 2, MIN_SIDE / 2), 1.0 - MIN_SIDE / 2)
            a, b = mid - MIN_SIDE / 2, mid + MIN_SIDE / 2
        lo.append(a)
        hi.append(b)
    return BoundingBox(lo[0], lo[1], hi[0], hi[1])


@dataclass(frozen=True, eq=False)
class Scene:
    scene_id: int
    features: np.ndarray
    truth_box: BoundingBox
    region_label: int = 0

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 1 or feats.size < 1:
            raise DimensionError(f"scene {self.scene_id}: features must be a non-empty 1-D vector")
        if not np.all(np.isfinite(feats)):
            raise DimensionError(f"scene {self.scene_id}: non-finite features")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and self.region_label == other.region_label
            and self.truth_box == other.truth_box
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Shard:
    client_id: int
    scenes: tuple[Scene, ...]

    def __post_init__(self):
        object.__setattr__(self, "scenes", tuple(self.scenes))

    def __len__(self) -> int:
        return len(self.scenes)

    @functools.cached_property
    def features(self) -> np.ndarray:
        return scene_features(self.scenes)

    @functools.cached_property
    def targets(self) -> np.ndarray:
        return scene_targets(self.scenes)


def scene_features(scenes: Sequence[Scene]) -> np.ndarray:
    return np.stack([s.features for s in scenes])


def scene_targets(scenes: Sequence[Scene]) -> np.ndarray:
    """(n, 4) array of truth boxes in (cx, cy, w, h) form."""
    return np.array([s.truth_box.to_cxcywh() for s in scenes], dtype=np.float64)


@dataclass(frozen=True)
class DataConfig:
    n_scenes: int = 12000
    d_in: int = 8
    regions: int = 4
    noise_sigma: float = 0.01
    test_fraction: float = 0.1
    augment_copies: int = 0
    max_rotation_deg: float = 15.0

    def validate(self) -> None:
        _check_sizes(self.n_scenes, self.d_in, self.regions, self.noise_sigma)
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.augment_copies < 0:
            raise ConfigError("augment_copies must be >= 0")
        if self.max_rotation_deg < 0:
            raise ConfigError("max_rotation_deg must be >= 0")


def _check_sizes(count, d_in, regions, noise_sigma):
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if d_in < 4:
        raise ConfigError(f"d_in must be >= 4, got {d_in}")
    if regions < 1:
        raise ConfigError(f"regions must be >= 1, got {regions}")
    if not noise_sigma >= 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {noise_sigma}")


@dataclass(frozen=True, eq=False)
class RegionMap:
    """Feature centroid and affine box map ``(cx, cy, w, h) = bias + weight @ x`` of one region."""

    centroid: np.ndarray
    weight: np.ndarray
    bias: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.bias + self.weight @ x


def region_maps(d_in: int, regions: int, seed: int) -> list[RegionMap]:
    rng = np.random.default_rng([seed, 0x5CE4E])
    shared = rng.uniform(-1, 1, size=(2, d_in - 2))
    maps = []
    for _ in range(regions):
        centroid = rng.uniform(-CENTROID_SPREAD, CENTROID_SPREAD, size=d_in)
        weight = np.zeros((4, d_in))
        weight[0, 0] = CENTER_GAIN
        weight[1, 1] = CENTER_GAIN
        coef = shared + 0.5 * rng.uniform(-1, 1, size=shared.shape)
        coef *= SIZE_COEF_L1 / np.abs(coef).sum(axis=1, keepdims=True)
        weight[2:, 2:] = coef
        bias = np.array([0.5, 0.5, SIZE_BASE, SIZE_BASE])
        bias[2:] += rng.uniform(-SIZE_REGION_SPREAD, SIZE_REGION_SPREAD, size=2)
        maps.append(RegionMap(centroid, weight, bias))
    return maps


def generate_dataset(count: int, d_in: int = 8, regions: int = 4, noise_sigma: float = 0.01,
                     seed: int = 0) -> list[Scene]:
    """Draw ``count`` scenes; deterministic in ``seed``.

    Features are ``centroid[region] + U(-0.6, 0.6)``; the truth box is the
    region's affine map of the features plus Gaussian noise on (cx, cy, w, h),
    clipped into the unit square. With ``noise_sigma=0`` no clipping occurs.
    """
    _check_sizes(count, d_in, regions, noise_sigma)
    maps = region_maps(d_in, regions, seed)
    rng = np.random.default_rng([seed, 0xDA7A])
    labels = rng.integers(0, regions, size=count)
    jitter = rng.uniform(-FEATURE_JITTER, FEATURE_JITTER, size=(count, d_in))
    noise = rng.normal(0.0, 1.0, size=(count, 4)) * noise_sigma
    scenes = []
    for i in range(count):
        m = maps[labels[i]]
        x = m.centroid + jitter[i]
        cx, cy, w, h = m(x) + noise[i]
        if noise_sigma == 0:
            box = BoundingBox.from_cxcywh(cx, cy, w, h)
        else:
            box = clip_box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
        scenes.append(Scene(i, x, box, int(labels[i])))
    return scenes


def rotate_augment(scene: Scene, theta_deg: float, *, scene_id: int | None = None) -> Scene:
    """Rotate the scene by ``theta_deg`` about the image center.

    The box becomes the axis-aligned hull of its rotated corners, clipped to
    the unit square. The position descriptor ``features[:2]`` is rotated by
    the same angle, which moves the generator's box center exactly as the
    image rotation does.
    """
    if theta_deg == 0:
        if scene_id is None:
            return scene
        return Scene(scene_id, scene.features, scene.truth_box, scene.region_label)
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    b = scene.truth_box
    xs = []
    ys = []
    for px, py in ((b.x_min, b.y_min), (b.x_max, b.y_min), (b.x_max, b.y_max), (b.x_min, b.y_max)):
        dx, dy = px - 0.5, py - 0.5
        xs.append(0.5 + c * dx - s * dy)
        ys.append(0.5 + s * dx + c * dy)
    box = clip_box(min(xs), min(ys), max(xs), max(ys))
    feats = scene.features.copy()
    f0, f1 = feats[0], feats[1]
    feats[0] = c * f0 - s * f1
    feats[1] = s * f0 + c * f1
    return Scene(scene.scene_id if scene_id is None else scene_id, feats, box, scene.region_label)


def augment_dataset(scenes: Sequence[Scene], copies: int, max_deg: float = 15.0,
                    seed: int = 0) -> list[Scene]:
    """Append ``copies`` randomly rotated variants (angle uniform in ±max_deg) of every scene.

    New scenes get fresh ids continuing after the largest existing id.
    """
    out = list(scenes)
    if copies <= 0 or not scenes:
        return out
    rng = np.random.default_rng([seed, 0xA06])
    next_id = max(s.scene_id for s in scenes) + 1
    for _ in range(copies):
        for sc in scenes:
            out.append(rotate_augment(sc, rng.uniform(-max_deg, max_deg), scene_id=next_id))
            next_id += 1
    return out


def train_test_split(scenes: Sequence[Scene], test_fraction: float = 0.1, seed: int = 0):
    """Seeded shuffle, then hold out the first ``round(test_fraction*n)`` scenes (at least one)."""
    if len(scenes) < 2:
        raise ConfigError("need at least two scenes to split into train and test")
    rng = np.random.default_rng([seed, 0x7E57])
    order = rng.permutation(len(scenes))
    n_test = min(max(1, int(math.floor(test_fraction * len(scenes) + 0.5))), len(scenes) - 1)
    test = [scenes[i] for i in order[:n_test]]
    train = [scenes[i] for i in order[n_test:]]
    return train, test


class PartitionScheme(str, enum.Enum):
    IID = "iid"
    QUANTITY_SKEW = "quantity_skew"
    REGION_DIRICHLET = "region_dirichlet"

    @classmethod
    def parse(cls, name: str) -> "PartitionScheme":
        key = name.strip().lower().replace("-", "_")
        aliases = {"quantityskew": "quantity_skew", "regiondirichlet": "region_dirichlet",
                   "dirichlet": "region_dirichlet"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown partition scheme {name!r}") from None


QUANTITY_RATIO = 0.8
BALANCE_TOLERANCE = 0.1


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    raw = weights / weights.sum() * total
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition(scenes: Sequence[Scene], n_clients: int, scheme=PartitionScheme.REGION_DIRICHLET,
              alpha: float = 0.5, seed: int = 0) -> list[Shard]:
    """Split ``scenes`` into ``n_clients`` disjoint, non-empty shards.

    iid
        seeded shuffle, then near-equal contiguous chunks (sizes differ by <= 1)
    quantity_skew
        shard sizes follow the geometric ramp ``0.8**k``, each at least 1
    region_dirichlet
        each region's scenes are dealt to clients in Dirichlet(alpha)
        proportions; then random scenes move from the largest to the smallest
        shard until ``max - min <= max(1, 0.1 * mean)``
    """
    scheme = PartitionScheme.parse(scheme) if isinstance(scheme, str) else scheme
    n = len(scenes)
    if n_clients < 1:
        raise ConfigError(f"n_clients must be >= 1, got {n_clients}")
    if n_clients > n:
        raise ConfigError(f"cannot split {n} scenes over {n_clients} clients")
    rng = np.random.default_rng([seed, 0x9A27])

    if scheme is PartitionScheme.IID:
        order = rng.permutation(n)
        groups = [list(chunk) for chunk in np.array_split(order, n_clients)]
    elif scheme is PartitionScheme.QUANTITY_SKEW:
        weights = QUANTITY_RATIO ** np.arange(n_clients, dtype=float)
        counts = _largest_remainder(weights, n - n_clients) + 1
        order = rng.permutation(n)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        groups = [list(order[bounds[k]:bounds[k + 1]]) for k in range(n_clients)]
    elif scheme is PartitionScheme.REGION_DIRICHLET:
        if not alpha > 0:
            raise ConfigError(f"alpha must be > 0 for region_dirichlet, got {alpha}")
        groups = _dirichlet_groups(scenes, n_clients, alpha, rng)
    else:  # pragma: no cover
        raise ConfigError(f"unsupported scheme {scheme}")

    if any(len(g) == 0 for g in groups):
        raise FedSimError("partition produced an empty shard")
    return [Shard(k, [scenes[i] for i in g]) for k, g in enumerate(groups)]


def _dirichlet_groups(scenes, n_clients, alpha, rng) -> list[list[int]]:
    labels = np.array([s.region_label for s in scenes])
    groups: list[list[int]] = [[] for _ in range(n_clients)]
    for region in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == region))
        props = rng.dirichlet(np.full(n_clients, alpha))
        counts = _largest_remainder(props, len(idx))
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for k in range(n_clients):
            groups[k].extend(idx[bounds[k]:bounds[k + 1]].tolist())

    tol = max(1, int(BALANCE_TOLERANCE * len(scenes) / n_clients))
    while True:
        sizes = [len(g) for g in groups]
        big = int(np.argmax(sizes))
        small = int(np.argmin(sizes))
        gap = sizes[big] - sizes[small]
        if gap <= tol:
            break
        move = gap // 2
        pick = np.sort(rng.choice(sizes[big], size=move, replace=False))[::-1]
        for p in pick:
            groups[small].append(groups[big].pop(int(p)))
    return [sorted(g) for g in groups]


def region_histogram(scenes: Iterable[Scene], regions: int) -> np.ndarray:
    counts = np.bincount([s.region_label for s in scenes], minlength=regions).astype(float)
    return counts / counts.sum()


# --- line-delimited text export -------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dump_scenes(scenes: Iterable[Scene], out: TextIO) -> None:
    """One scene per line: ``scene_id region x_1..x_d x_min y_min x_max y_max``."""
    for s in scenes:
        b = s.truth_box
        parts = [str(s.scene_id), str(s.region_label)]
        parts += [_fmt(v) for v in s.features]
        parts += [_fmt(b.x_min), _fmt(b.y_min), _fmt(b.x_max), _fmt(b.y_max)]
        out.write(" ".join(parts) + "\n")


def dumps_scenes(scenes: Iterable[Scene]) -> str:
    buf = io.StringIO()
    dump_scenes(scenes, buf)
    return buf.getvalue()


def load_scenes(src: TextIO) -> list[Scene]:
    scenes = []
    d_in = None
    for lineno, line in enumerate(src, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 7:
            raise DimensionError(f"line {lineno}: expected at least 7 fields, got {len(parts)}")
        if d_in is None:
            d_in = len(parts) - 6
        elif len(parts) - 6 != d_in:
            raise DimensionError(f"line {lineno}: feature count {len(parts) - 6} != {d_in}")
        vals = [float(p) for p in parts[2:]]
        scenes.append(Scene(int(parts[0]), np.array(vals[:d_in]), BoundingBox(*vals[d_in:]), int(parts[1])))
    return scenes


def save_dataset(scenes: Iterable[Scene], path: str | os.PathLike) -> str:
    text = dumps_scenes(scenes)
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(text)
    return git_blob_hash(text)


def load_dataset(path: str | os.PathLike) -> list[Scene]:
    with open(path, encoding="ascii") as f:
        return load_scenes(f)


def git_blob_hash(text: str) -> str:
    data = text.encode("ascii")
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def dataset_hash(scenes: Iterable[Scene]) -> str:
    """Content hash of the text export, computed the way ``git hash-object`` does."""
    return git_blob_hash(dumps_scenes(scenes))
