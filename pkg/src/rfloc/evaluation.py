"""Metrics and experiment drivers.

Confusion matrix for environment classification, localization RMSE, the
percentage-improvement metric over the RSS baseline, per-kind comparison
tables, k-sweeps, and query-latency measurement. Reports are emitted as
delimited text; figure rendering lives in :mod:`rfloc.figures`.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence, TypeVar

import numpy as np

from .cascade import CascadeModel, localize
from .dataset import Measurement, MeasurementSet
from .errors import ValidationError
from .features import ALL_KINDS, FeatureKind, FeatureRepr, build_feature
from .knn import FingerprintModel, build_fingerprint_model, classify, nearest

T = TypeVar("T")
U = TypeVar("U")


def _map_ordered(fn: Callable[[T], U], items: Sequence[T], threads: int = 1) -> list[U]:
    """Order-preserving map, optionally fanned out over a thread pool."""
    if threads <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def rmse(estimates: Sequence[tuple[float, float]], truths: Sequence[tuple[float, float]]) -> float:
    """Root-mean-square of planar Euclidean position errors, in the input unit (cm)."""
    if len(estimates) == 0:
        raise ValidationError("rmse needs at least one estimate")
    if len(estimates) != len(truths):
        raise ValidationError(
            f"estimate/truth length mismatch: {len(estimates)} vs {len(truths)}"
        )
    est = np.asarray(estimates, dtype=np.float64)
    tru = np.asarray(truths, dtype=np.float64)
    return math.sqrt(float(np.mean(np.sum((est - tru) ** 2, axis=1))))


def alpha(rmse_rss: float, rmse_beta: float) -> float:
    """Percentage reduction of RMSE relative to the RSS baseline."""
    if not rmse_rss > 0.0:
        raise ValidationError(f"baseline RMSE must be positive, got {rmse_rss}")
    return (rmse_rss - rmse_beta) / rmse_rss * 100.0


@dataclass(eq=False)
class ConfusionMatrix:
    """Square count matrix; row = true environment, column = predicted."""

    labels: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        self.counts = counts
        n = len(self.labels)
        if counts.shape != (n, n):
            raise ValidationError(f"counts must be {n}x{n}, got {counts.shape}")
        if np.any(counts < 0):
            raise ValidationError("confusion counts must be non-negative")

    @classmethod
    def empty(cls, labels: Sequence[str]) -> "ConfusionMatrix":
        n = len(labels)
        return cls(labels=tuple(labels), counts=np.zeros((n, n), dtype=np.int64))

    def add(self, true_env: str, predicted_env: str) -> None:
        i = self.labels.index(true_env)
        j = self.labels.index(predicted_env)
        self.counts[i, j] += 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        total = self.total
        if total == 0:
            raise ValidationError("empty confusion matrix has no accuracy")
        return float(np.trace(self.counts)) / total

    def row_percent(self) -> np.ndarray:
        """Rows normalized to 100 (rows with no samples stay at 0)."""
        sums = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            pct = np.where(sums > 0, self.counts / sums * 100.0, 0.0)
        return pct


def confusion(
    model: CascadeModel,
    test_sets: Mapping[str, MeasurementSet] | Sequence[MeasurementSet],
    threads: int = 1,
) -> ConfusionMatrix:
    """Stage-1 classification of every test measurement, accumulated by true label."""
    sets = list(test_sets.values()) if isinstance(test_sets, Mapping) else list(test_sets)
    labels = model.environments
    matrix = ConfusionMatrix.empty(labels)
    for mset in sets:
        if mset.env not in labels:
            raise ValidationError(f"test environment {mset.env!r} unknown to the model")

        def predict(m: Measurement) -> str:
            feature = build_feature(m, model.policy.stage1_kind, model.repr)
            return classify(model.stage1, feature, model.k1)

        predictions = _map_ordered(predict, mset.measurements, threads)
        for predicted in predictions:
            matrix.add(mset.env, predicted)
    return matrix


@dataclass(eq=False)
class FeatureTable:
    """Per-(environment, kind) standalone stage-2 RMSE plus the improvement column."""

    environments: tuple[str, ...]
    kinds: tuple[FeatureKind, ...]
    rmse_cm: dict[tuple[str, FeatureKind], float]
    best_kind: dict[str, FeatureKind]
    alpha_percent: dict[str, float] = field(default_factory=dict)


def _stage2_estimates(
    db_model: FingerprintModel,
    queries: Sequence[Measurement],
    kind: FeatureKind,
    repr: FeatureRepr,
    k: int,
    threads: int = 1,
    k_values: Sequence[int] | None = None,
) -> dict[int, list[tuple[float, float]]]:
    """Position estimates for one database, for one k or a whole k-sweep.

    Neighbor order per query is computed once; every k reuses its prefix, so
    a sweep is exactly consistent with single-k evaluation.
    """
    ks = sorted(set(k_values if k_values is not None else [k]))
    if ks[0] < 1 or ks[-1] > db_model.size:
        raise ValidationError(f"k values {ks} out of range [1, {db_model.size}]")
    k_max = ks[-1]
    assert db_model.positions is not None

    def estimate(m: Measurement) -> list[tuple[float, float]]:
        feature = build_feature(m, kind, repr)
        neighbors = nearest(db_model, feature, k_max)
        pts = db_model.positions[[i for i, _ in neighbors]]
        out = []
        for kk in ks:
            center = pts[:kk].mean(axis=0)
            out.append((float(center[0]), float(center[1])))
        return out

    per_query = _map_ordered(estimate, list(queries), threads)
    return {kk: [row[i] for row in per_query] for i, kk in enumerate(ks)}


def feature_table(
    train_sets: Mapping[str, MeasurementSet] | Sequence[MeasurementSet],
    test_sets: Mapping[str, MeasurementSet] | Sequence[MeasurementSet],
    kinds: Sequence[FeatureKind] = ALL_KINDS,
    repr: FeatureRepr = FeatureRepr(),
    k: int = 1,
    scaling: str = "raw",
    threads: int = 1,
) -> FeatureTable:
    """Standalone stage-2 RMSE for every (environment, kind) pair.

    The improvement column compares each environment's best kind against the
    RSS baseline (when RSS is among the evaluated kinds).
    """
    train = {s.env: s for s in (train_sets.values() if isinstance(train_sets, Mapping) else train_sets)}
    test = {s.env: s for s in (test_sets.values() if isinstance(test_sets, Mapping) else test_sets)}
    if set(train) != set(test):
        raise ValidationError("train/test environment sets differ")
    if not kinds:
        raise ValidationError("no feature kinds to evaluate")

    order = {kk: i for i, kk in enumerate(ALL_KINDS)}
    environments = tuple(train)
    table: dict[tuple[str, FeatureKind], float] = {}
    best: dict[str, FeatureKind] = {}
    alphas: dict[str, float] = {}
    for env in environments:
        truths = [m.position_cm for m in test[env]]
        for kind in kinds:
            db = build_fingerprint_model(train[env], kind, repr, scaling)
            estimates = _stage2_estimates(db, test[env].measurements, kind, repr, k, threads)[k]
            table[(env, kind)] = rmse(estimates, truths)
        ranked = sorted(kinds, key=lambda kk: (table[(env, kk)], kk.n_blocks, order[kk]))
        best[env] = ranked[0]
        if FeatureKind.RSS in kinds:
            alphas[env] = alpha(table[(env, FeatureKind.RSS)], table[(env, best[env])])
    return FeatureTable(
        environments=environments,
        kinds=tuple(kinds),
        rmse_cm=table,
        best_kind=best,
        alpha_percent=alphas,
    )


def sweep_k(
    train_sets: Mapping[str, MeasurementSet] | Sequence[MeasurementSet],
    test_sets: Mapping[str, MeasurementSet] | Sequence[MeasurementSet],
    kinds: Sequence[FeatureKind] = ALL_KINDS,
    k_values: Sequence[int] = tuple(range(1, 61)),
    repr: FeatureRepr = FeatureRepr(),
    scaling: str = "raw",
    threads: int = 1,
) -> list[tuple[str, FeatureKind, int, float]]:
    """RMSE curves over k, one row (env, kind, k, rmse_cm) per point, plot-ready."""
    train = {s.env: s for s in (train_sets.values() if isinstance(train_sets, Mapping) else train_sets)}
    test = {s.env: s for s in (test_sets.values() if isinstance(test_sets, Mapping) else test_sets)}
    if set(train) != set(test):
        raise ValidationError("train/test environment sets differ")
    if not k_values:
        raise ValidationError("no k values to sweep")

    rows: list[tuple[str, FeatureKind, int, float]] = []
    for env in train:
        truths = [m.position_cm for m in test[env]]
        for kind in kinds:
            db = build_fingerprint_model(train[env], kind, repr, scaling)
            by_k = _stage2_estimates(
                db, test[env].measurements, kind, repr, 1, threads, k_values=k_values
            )
            for k in k_values:
                rows.append((env, kind, k, rmse(by_k[k], truths)))
    return rows


@dataclass(eq=False)
class EvalReport:
    """Everything one evaluation run produces, ready for the report writers."""

    table: FeatureTable
    confusion: ConfusionMatrix
    timing: "LatencyStats | None" = None
    cascade_rmse_cm: dict[str, float] = field(default_factory=dict)
    oracle_rmse_cm: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for env, value in self.table.alpha_percent.items():
            if value > 100.0:
                raise ValidationError(f"alpha for {env!r} exceeds 100%: {value}")
            recomputed = alpha(
                self.table.rmse_cm[(env, FeatureKind.RSS)],
                self.table.rmse_cm[(env, self.table.best_kind[env])],
            )
            if abs(recomputed - value) > 1e-9:
                raise ValidationError(f"alpha for {env!r} inconsistent with its RMSE columns")


def cascade_rmse(
    model: CascadeModel,
    test_sets: Mapping[str, MeasurementSet] | Sequence[MeasurementSet],
    oracle_stage1: bool = False,
    threads: int = 1,
) -> dict[str, float]:
    """Per-environment cascade RMSE; with ``oracle_stage1`` the true label bypasses stage 1."""
    sets = list(test_sets.values()) if isinstance(test_sets, Mapping) else list(test_sets)
    out: dict[str, float] = {}
    for mset in sets:
        force = mset.env if oracle_stage1 else None

        def run(m: Measurement) -> tuple[float, float]:
            return localize(model, m, force_env=force).position_cm

        estimates = _map_ordered(run, mset.measurements, threads)
        out[mset.env] = rmse(estimates, [m.position_cm for m in mset])
    return out


@dataclass(frozen=True)
class LatencyStats:
    median_us: float
    p95_us: float
    repetitions: int
    model_size: int


def time_queries(
    model: CascadeModel,
    queries: Sequence[Measurement],
    repetitions: int = 200,
) -> LatencyStats:
    """Wall-clock per-query latency of stage-1 classification (reported, not asserted)."""
    if repetitions < 100:
        raise ValidationError(f"need at least 100 repetitions, got {repetitions}")
    if not queries:
        raise ValidationError("need at least one query")
    features = [
        build_feature(m, model.policy.stage1_kind, model.repr).values for m in queries
    ]
    prepared = [model.stage1.query_values(v) for v in features]
    for values in prepared[: min(len(prepared), 10)]:  # warmup
        classify(model.stage1, values, model.k1)
    samples_ns = np.empty(repetitions, dtype=np.float64)
    for i in range(repetitions):
        values = prepared[i % len(prepared)]
        t0 = time.perf_counter_ns()
        classify(model.stage1, values, model.k1)
        samples_ns[i] = time.perf_counter_ns() - t0
    return LatencyStats(
        median_us=float(np.median(samples_ns)) / 1e3,
        p95_us=float(np.percentile(samples_ns, 95)) / 1e3,
        repetitions=repetitions,
        model_size=model.stage1.size,
    )


# ---------------------------------------------------------------------------
# Delimited-text report writers. All output is deterministic given the inputs.
# ---------------------------------------------------------------------------


def write_confusion_csv(matrix: ConfusionMatrix, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["true_env"] + [f"pred_{label}" for label in matrix.labels])
        for label, row in zip(matrix.labels, matrix.counts):
            writer.writerow([label] + [str(int(v)) for v in row])


def write_feature_table_csv(table: FeatureTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["env"] + [kind.value for kind in table.kinds]
        header += ["best_kind", "alpha_percent"]
        writer.writerow(header)
        for env in table.environments:
            row = [env] + [repr(table.rmse_cm[(env, kind)]) for kind in table.kinds]
            row.append(table.best_kind[env].value)
            row.append(repr(table.alpha_percent[env]) if env in table.alpha_percent else "")
            writer.writerow(row)


def write_ksweep_csv(rows: Sequence[tuple[str, FeatureKind, int, float]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["env", "kind", "k", "rmse_cm"])
        for env, kind, k, value in rows:
            writer.writerow([env, kind.value, str(k), repr(value)])


def write_latency_csv(stats: LatencyStats, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model_size", "repetitions", "median_us", "p95_us"])
        writer.writerow(
            [str(stats.model_size), str(stats.repetitions), repr(stats.median_us), repr(stats.p95_us)]
        )
