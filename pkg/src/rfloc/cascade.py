"""Cascaded two-stage localization.

Stage 1 classifies the surrounding environment from a pooled, labeled
fingerprint database. Stage 2 looks up that environment's preferred feature
kind in the policy and estimates position with the matching per-environment
database. The policy itself can be fitted from data by picking, per
environment, the feature kind with the lowest validation RMSE.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Measurement, MeasurementSet
from .errors import DataFileError, RflocError, ValidationError
from .features import ALL_KINDS, FeatureKind, FeatureRepr, ScalingParams, build_feature
from .kvfile import read_kv, write_kv
from .knn import FingerprintModel, build_fingerprint_model, centroid_of, nearest, vote

DEFAULT_STAGE1_KIND = FeatureKind.CTF_FCF
DEFAULT_VALIDATION_FRACTION = 0.2


@dataclass(frozen=True)
class Policy:
    """Environment label -> stage-2 feature kind, plus the stage-1 kind."""

    stage2_kind: Mapping[str, FeatureKind]
    stage1_kind: FeatureKind = DEFAULT_STAGE1_KIND

    def __post_init__(self) -> None:
        object.__setattr__(self, "stage2_kind", dict(self.stage2_kind))

    def kind_for(self, env: str) -> FeatureKind:
        try:
            return self.stage2_kind[env]
        except KeyError:
            raise ValidationError(f"policy has no entry for environment {env!r}")

    @property
    def environments(self) -> tuple[str, ...]:
        return tuple(self.stage2_kind)

    def with_overrides(self, overrides: Mapping[str, FeatureKind]) -> "Policy":
        merged = dict(self.stage2_kind)
        merged.update(overrides)
        return Policy(stage2_kind=merged, stage1_kind=self.stage1_kind)


def save_policy(policy: Policy, path: str | Path) -> None:
    entries = {"stage1_kind": policy.stage1_kind.value}
    for env in policy.environments:
        entries[env] = policy.stage2_kind[env].value
    write_kv(path, entries, header="stage-2 feature kind per environment")


def load_policy(path: str | Path) -> Policy:
    entries = read_kv(path)
    stage1 = FeatureKind.parse(entries.pop("stage1_kind", DEFAULT_STAGE1_KIND.value))
    stage2 = {env: FeatureKind.parse(kind) for env, kind in entries.items()}
    if not stage2:
        raise DataFileError(f"policy file {path} lists no environments")
    return Policy(stage2_kind=stage2, stage1_kind=stage1)


@dataclass(eq=False)
class CascadeModel:
    """Both stages plus the policy gluing them together. Immutable after fit."""

    stage1: FingerprintModel
    stage2: dict[str, FingerprintModel]
    policy: Policy
    repr: FeatureRepr
    k1: int = 1
    k2: int = 1

    def __post_init__(self) -> None:
        for env in self.policy.environments:
            if env not in self.stage2:
                raise ValidationError(f"stage-2 model missing for environment {env!r}")
        for env, model in self.stage2.items():
            if model.kind != self.policy.kind_for(env):
                raise ValidationError(
                    f"stage-2 model for {env!r} built with {model.kind} but policy "
                    f"says {self.policy.kind_for(env)}"
                )

    @property
    def environments(self) -> tuple[str, ...]:
        return tuple(self.stage2)


@dataclass(eq=False)
class LocalizationResult:
    predicted_env: str
    position_cm: tuple[float, float]
    stage1_neighbors: list[tuple[int, float]] = field(default_factory=list)
    stage2_neighbors: list[tuple[int, float]] = field(default_factory=list)


def _as_env_dict(train_sets: Mapping[str, MeasurementSet] | Sequence[MeasurementSet]):
    if isinstance(train_sets, Mapping):
        items = list(train_sets.items())
    else:
        items = [(s.env, s) for s in train_sets]
    if not items:
        raise ValidationError("need at least one environment")
    seen: dict[str, MeasurementSet] = {}
    for env, mset in items:
        if env in seen:
            raise ValidationError(f"duplicate environment {env!r}")
        if len(mset) == 0:
            raise ValidationError(f"environment {env!r} has no measurements")
        seen[env] = mset
    return seen


def fit(
    train_sets: Mapping[str, MeasurementSet] | Sequence[MeasurementSet],
    policy: Policy,
    repr: FeatureRepr,
    k1: int = 1,
    k2: int = 1,
    scaling: str = "raw",
) -> CascadeModel:
    """Build the pooled stage-1 model and one stage-2 model per environment."""
    sets = _as_env_dict(train_sets)
    for env in sets:
        policy.kind_for(env)  # raises if the policy misses an environment

    pooled: list[Measurement] = []
    for mset in sets.values():
        pooled.extend(mset.measurements)
    stage1 = build_fingerprint_model(pooled, policy.stage1_kind, repr, scaling)

    stage2 = {
        env: build_fingerprint_model(mset, policy.kind_for(env), repr, scaling)
        for env, mset in sets.items()
    }
    return CascadeModel(stage1=stage1, stage2=stage2, policy=policy, repr=repr, k1=k1, k2=k2)


def carve_validation(
    mset: MeasurementSet, fraction: float = DEFAULT_VALIDATION_FRACTION
) -> tuple[MeasurementSet, MeasurementSet]:
    """Split a training set into (fit, validation) parts for policy selection.

    Per grid point, the last ceil-ish ``fraction`` of iterations become
    validation (at least one, and at least one stays in the fit part).
    """
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"validation fraction must be in (0, 1), got {fraction}")
    groups: dict[int, list[int]] = {}
    for idx, m in enumerate(mset.measurements):
        groups.setdefault(m.grid_index, []).append(idx)
    fit_idx: list[int] = []
    val_idx: list[int] = []
    for point in sorted(groups):
        members = sorted(groups[point], key=lambda i: (mset.measurements[i].iteration, i))
        n = len(members)
        if n < 2:
            raise ValidationError(
                f"grid point {point} has only {n} training measurement(s); "
                "need at least 2 to carve a validation split"
            )
        n_val = min(max(1, math.floor(n * fraction)), n - 1)
        fit_idx.extend(members[: n - n_val])
        val_idx.extend(members[n - n_val:])
    fit_idx.sort()
    val_idx.sort()
    make = lambda part, tag: MeasurementSet(
        env=mset.env,
        freq_grid=mset.freq_grid,
        measurements=[mset.measurements[i] for i in part],
        geometry=mset.geometry,
        provenance=f"{mset.provenance} | carve={tag}",
    )
    return make(fit_idx, "fit"), make(val_idx, "validation")


def _validation_rmse(
    train: MeasurementSet,
    validation: MeasurementSet,
    kind: FeatureKind,
    repr: FeatureRepr,
    k: int,
    scaling: str,
) -> float:
    model = build_fingerprint_model(train, kind, repr, scaling)
    total = 0.0
    for m in validation:
        feature = build_feature(m, kind, repr)
        est = centroid_of(model, nearest(model, feature, k))
        total += (est[0] - m.position_cm[0]) ** 2 + (est[1] - m.position_cm[1]) ** 2
    return math.sqrt(total / len(validation))


def fit_policy(
    train_sets: Mapping[str, MeasurementSet] | Sequence[MeasurementSet],
    validation_sets: Mapping[str, MeasurementSet] | Sequence[MeasurementSet],
    candidate_kinds: Sequence[FeatureKind] = ALL_KINDS,
    repr: FeatureRepr = FeatureRepr(),
    k2: int = 1,
    scaling: str = "raw",
    stage1_kind: FeatureKind = DEFAULT_STAGE1_KIND,
) -> Policy:
    """Pick, per environment, the candidate kind with the lowest validation RMSE.

    Ties prefer fewer feature blocks, then the canonical column order.
    """
    if not candidate_kinds:
        raise ValidationError("candidate kind list is empty")
    train = _as_env_dict(train_sets)
    validation = _as_env_dict(validation_sets)
    if set(train) != set(validation):
        raise ValidationError(
            f"train environments {sorted(train)} differ from validation environments "
            f"{sorted(validation)}"
        )
    order = {kind: i for i, kind in enumerate(ALL_KINDS)}
    chosen: dict[str, FeatureKind] = {}
    for env in train:
        scored = []
        for kind in candidate_kinds:
            rmse = _validation_rmse(train[env], validation[env], kind, repr, k2, scaling)
            scored.append((rmse, kind.n_blocks, order[kind], kind))
        scored.sort(key=lambda t: t[:3])
        chosen[env] = scored[0][3]
    return Policy(stage2_kind=chosen, stage1_kind=stage1_kind)


def localize(
    model: CascadeModel, m: Measurement, force_env: str | None = None
) -> LocalizationResult:
    """Run the cascade on one measurement.

    ``force_env`` bypasses stage 1 with an oracle label, which makes the
    result identical to running stage 2 alone for that environment.
    """
    if force_env is not None:
        predicted = force_env
        stage1_neighbors: list[tuple[int, float]] = []
    else:
        s1_feature = build_feature(m, model.policy.stage1_kind, model.repr)
        stage1_neighbors = nearest(model.stage1, s1_feature, model.k1)
        assert model.stage1.labels is not None
        predicted = vote([model.stage1.labels[i] for i, _ in stage1_neighbors])

    stage2_model = model.stage2.get(predicted)
    if stage2_model is None:
        raise RflocError(
            f"stage 1 produced environment {predicted!r} with no stage-2 model; "
            "this indicates a corrupted model"
        )
    s2_feature = build_feature(m, model.policy.kind_for(predicted), model.repr)
    stage2_neighbors = nearest(stage2_model, s2_feature, model.k2)
    position = centroid_of(stage2_model, stage2_neighbors)
    return LocalizationResult(
        predicted_env=predicted,
        position_cm=position,
        stage1_neighbors=stage1_neighbors,
        stage2_neighbors=stage2_neighbors,
    )


# ---------------------------------------------------------------------------
# Serialization: a model directory holds meta.txt, policy.txt, and one CSV of
# feature rows per fingerprint database (delimited text throughout).
# ---------------------------------------------------------------------------


def _write_model_csv(model: FingerprintModel, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["env", "pos_x_cm", "pos_y_cm"] + [f"f_{i}" for i in range(model.dim)]
        writer.writerow(header)
        labels = model.labels if model.labels is not None else [""] * model.size
        positions = (
            model.positions
            if model.positions is not None
            else np.full((model.size, 2), np.nan)
        )
        for label, pos, row in zip(labels, positions, model.features):
            writer.writerow(
                [label, repr(float(pos[0])), repr(float(pos[1]))]
                + [repr(float(v)) for v in row]
            )


def _read_model_csv(
    path: Path, kind: FeatureKind, repr_: FeatureRepr, scaling: ScalingParams | None
) -> FingerprintModel:
    if not path.is_file():
        raise DataFileError(f"model file not found: {path}")
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 3
        labels: list[str] = []
        positions: list[tuple[float, float]] = []
        rows: list[list[float]] = []
        for row in reader:
            if len(row) != len(header):
                raise DataFileError(f"{path}: line {reader.line_num}: ragged row")
            labels.append(row[0])
            positions.append((float(row[1]), float(row[2])))
            rows.append([float(v) for v in row[3:]])
    features = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return FingerprintModel(
        features=features,
        kind=kind,
        repr=repr_,
        labels=tuple(labels),
        positions=np.array(positions, dtype=np.float64),
        scaling=scaling,
    )


def _write_scaling(params: ScalingParams, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f_{i}" for i in range(len(params.mean))])
        writer.writerow([repr(float(v)) for v in params.mean])
        writer.writerow([repr(float(v)) for v in params.std])


def _read_scaling(path: Path) -> ScalingParams:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        mean = np.array([float(v) for v in next(reader)], dtype=np.float64)
        std = np.array([float(v) for v in next(reader)], dtype=np.float64)
    return ScalingParams(mean=mean, std=std)


def save_model(model: CascadeModel, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "repr_mode": model.repr.mode,
        "scalar_bin": "" if model.repr.scalar_bin is None else str(model.repr.scalar_bin),
        "max_lag": str(model.repr.max_lag),
        "k1": str(model.k1),
        "k2": str(model.k2),
        "environments": ",".join(model.environments),
        "scaled": "1" if model.stage1.scaling is not None else "0",
    }
    write_kv(directory / "meta.txt", meta, header="cascade model metadata")
    save_policy(model.policy, directory / "policy.txt")
    _write_model_csv(model.stage1, directory / "stage1.csv")
    if model.stage1.scaling is not None:
        _write_scaling(model.stage1.scaling, directory / "stage1_scaling.csv")
    for env, m2 in model.stage2.items():
        _write_model_csv(m2, directory / f"stage2_{env}.csv")
        if m2.scaling is not None:
            _write_scaling(m2.scaling, directory / f"stage2_{env}_scaling.csv")


def load_model(directory: str | Path) -> CascadeModel:
    directory = Path(directory)
    meta = read_kv(directory / "meta.txt")
    policy = load_policy(directory / "policy.txt")
    repr_ = FeatureRepr(
        mode=meta.get("repr_mode", "sweep"),
        scalar_bin=int(meta["scalar_bin"]) if meta.get("scalar_bin") else None,
        max_lag=int(meta.get("max_lag", 16)),
    )
    scaled = meta.get("scaled", "0") == "1"

    def scaling_for(name: str) -> ScalingParams | None:
        path = directory / name
        return _read_scaling(path) if scaled and path.is_file() else None

    stage1 = _read_model_csv(
        directory / "stage1.csv", policy.stage1_kind, repr_, scaling_for("stage1_scaling.csv")
    )
    stage2 = {}
    for env in meta.get("environments", "").split(","):
        env = env.strip()
        if not env:
            continue
        stage2[env] = _read_model_csv(
            directory / f"stage2_{env}.csv",
            policy.kind_for(env),
            repr_,
            scaling_for(f"stage2_{env}_scaling.csv"),
        )
    return CascadeModel(
        stage1=stage1,
        stage2=stage2,
        policy=policy,
        repr=repr_,
        k1=int(meta.get("k1", 1)),
        k2=int(meta.get("k2", 1)),
    )
