"""From-scratch k-nearest-neighbor engine.

Euclidean distance, exhaustive linear scan (reference databases here are a
few thousand vectors at most), majority-vote classification, and centroid
position regression. Every tie is broken by ascending training index so
results are deterministic across platforms.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import MeasurementSet
from .errors import ValidationError
from .features import FeatureKind, FeatureRepr, FeatureVector, ScalingParams, build_matrix


@dataclass(frozen=True)
class KnnConfig:
    k: int = 1

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")


@dataclass(eq=False)
class FingerprintModel:
    """Stored training features plus whatever ground truth they carry.

    ``features`` is an (N, K) float64 matrix (already scaled if ``scaling``
    is set); queries arrive unscaled and are transformed on the way in.
    Immutable after construction; concurrent queries need no locking.
    """

    features: np.ndarray
    kind: FeatureKind
    repr: FeatureRepr
    labels: tuple[str, ...] | None = None
    positions: np.ndarray | None = None
    scaling: ScalingParams | None = None

    def __post_init__(self) -> None:
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.features = features
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValidationError("model needs a non-empty 2-D feature matrix")
        if not np.all(np.isfinite(features)):
            raise ValidationError("model features contain non-finite values")
        if self.labels is not None and len(self.labels) != features.shape[0]:
            raise ValidationError("labels length does not match feature count")
        if self.positions is not None:
            positions = np.ascontiguousarray(self.positions, dtype=np.float64)
            self.positions = positions
            if positions.shape != (features.shape[0], 2):
                raise ValidationError("positions must be an (N, 2) array")

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def query_values(self, query: FeatureVector | np.ndarray) -> np.ndarray:
        if isinstance(query, FeatureVector):
            if query.kind != self.kind:
                raise ValidationError(
                    f"query kind {query.kind} does not match model kind {self.kind}"
                )
            values = query.values
        else:
            values = np.asarray(query, dtype=np.float64)
        if values.shape != (self.dim,):
            raise ValidationError(
                f"query dimension {values.shape} does not match model dimension {self.dim}"
            )
        if self.scaling is not None:
            values = self.scaling.apply(values)
        return values


def build_fingerprint_model(
    measurements: MeasurementSet | Sequence,
    kind: FeatureKind,
    repr: FeatureRepr,
    scaling: str = "raw",
) -> FingerprintModel:
    """Build a model straight from measurements (features, labels, and positions)."""
    vectors, params = build_matrix(measurements, kind, repr, scaling)
    features = np.stack([v.values for v in vectors])
    labels = tuple(v.env for v in vectors)
    positions = np.array([v.position_cm for v in vectors], dtype=np.float64)
    return FingerprintModel(
        features=features,
        kind=kind,
        repr=repr,
        labels=labels,
        positions=positions,
        scaling=params,
    )


def distance(a: FeatureVector | np.ndarray, b: FeatureVector | np.ndarray) -> float:
    """Euclidean distance sqrt(sum_i (a_i - b_i)^2)."""
    av = a.values if isinstance(a, FeatureVector) else np.asarray(a, dtype=np.float64)
    bv = b.values if isinstance(b, FeatureVector) else np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape:
        raise ValidationError(f"dimension mismatch: {av.shape} vs {bv.shape}")
    diff = av - bv
    return math.sqrt(float(np.dot(diff, diff)))


def _squared_distances(model: FingerprintModel, values: np.ndarray) -> np.ndarray:
    diff = model.features - values[None, :]
    return np.einsum("ij,ij->i", diff, diff)


def nearest(
    model: FingerprintModel, query: FeatureVector | np.ndarray, k: int = 1
) -> list[tuple[int, float]]:
    """The k nearest training entries as (index, distance), ascending.

    Equal distances keep ascending index order (stable sort), so the result
    is a deterministic function of the model and query.
    """
    if not 1 <= k <= model.size:
        raise ValidationError(f"k must be in [1, {model.size}], got {k}")
    values = model.query_values(query)
    d2 = _squared_distances(model, values)
    if k == 1:
        idx = [int(np.argmin(d2))]  # argmin returns the first (lowest-index) minimum
    else:
        idx = [int(i) for i in np.argsort(d2, kind="stable")[:k]]
    return [(i, math.sqrt(float(d2[i]))) for i in idx]


def vote(neighbor_labels: Sequence[str]) -> str:
    """Majority vote; ties go to the label appearing earliest in the (nearest-first) list."""
    counts = Counter(neighbor_labels)
    top = max(counts.values())
    tied = {label for label, count in counts.items() if count == top}
    for label in neighbor_labels:
        if label in tied:
            return label
    raise AssertionError("unreachable: at least one label is always tied-best")


def classify(model: FingerprintModel, query: FeatureVector | np.ndarray, k: int = 1) -> str:
    if model.labels is None:
        raise ValidationError("model has no labels; cannot classify")
    neighbors = nearest(model, query, k)
    return vote([model.labels[i] for i, _ in neighbors])


def centroid_of(
    model: FingerprintModel,
    neighbors: Sequence[tuple[int, float]],
    weighted: bool = False,
) -> tuple[float, float]:
    """Aggregate neighbor positions: unweighted mean, or inverse-distance weights."""
    if model.positions is None:
        raise ValidationError("model has no positions; cannot locate")
    idx = [i for i, _ in neighbors]
    pts = model.positions[idx]
    if not weighted:
        center = pts.mean(axis=0)
        return (float(center[0]), float(center[1]))
    dists = np.array([d for _, d in neighbors], dtype=np.float64)
    if np.any(dists == 0.0):
        exact = pts[dists == 0.0]
        center = exact.mean(axis=0)
        return (float(center[0]), float(center[1]))
    weights = 1.0 / dists
    center = (pts * weights[:, None]).sum(axis=0) / weights.sum()
    return (float(center[0]), float(center[1]))


def locate(
    model: FingerprintModel,
    query: FeatureVector | np.ndarray,
    k: int = 1,
    weighted: bool = False,
) -> tuple[float, float]:
    """Position estimate from the k nearest entries; k=1 returns the best match exactly."""
    return centroid_of(model, nearest(model, query, k), weighted=weighted)
