"""Real-valued feature vectors built from measurements.

Three primary RF features (RSS, CTF, FCF) combine into seven kinds. A feature
vector concatenates its blocks in the fixed order RSS, CTF, FCF; complex
sweep samples contribute interleaved (real, imag) pairs. Scalar mode keeps
one complex sample per sweep (the 5-D construction for RSS+CTF+FCF); sweep
mode keeps them all.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dataset import Measurement, MeasurementSet
from .errors import ValidationError


class FeatureKind(enum.Enum):
    """The seven primary/hybrid feature combinations, in report column order."""

    RSS = "RSS"
    CTF = "CTF"
    FCF = "FCF"
    RSS_CTF = "RSS+CTF"
    RSS_FCF = "RSS+FCF"
    CTF_FCF = "CTF+FCF"
    RSS_CTF_FCF = "RSS+CTF+FCF"

    @property
    def blocks(self) -> tuple[str, ...]:
        return tuple(part.lower() for part in self.value.split("+"))

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "FeatureKind":
        key = "+".join(part.strip().upper() for part in text.split("+"))
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValidationError(
            f"unknown feature kind {text!r}; expected one of "
            f"{', '.join(k.value for k in cls)}"
        )


#: All kinds in canonical column order (primaries first, then hybrids).
ALL_KINDS: tuple[FeatureKind, ...] = tuple(FeatureKind)


@dataclass(frozen=True)
class FeatureRepr:
    """How sweeps are represented: one complex sample ("scalar") or all of them ("sweep").

    ``scalar_bin`` is the CTF frequency index used in scalar mode (None means
    the center bin); the FCF lag used in scalar mode is min(scalar_bin,
    max_lag). ``max_lag`` is the last FCF lag included in sweep mode.
    """

    mode: str = "sweep"
    scalar_bin: int | None = None
    max_lag: int = 16

    def __post_init__(self) -> None:
        if self.mode not in ("scalar", "sweep"):
            raise ValidationError(f"repr mode must be 'scalar' or 'sweep', got {self.mode!r}")
        if self.scalar_bin is not None and self.scalar_bin < 0:
            raise ValidationError(f"scalar_bin must be >= 0, got {self.scalar_bin}")
        if self.max_lag < 0:
            raise ValidationError(f"max_lag must be >= 0, got {self.max_lag}")

    def resolve_bin(self, n_points: int) -> int:
        b = n_points // 2 if self.scalar_bin is None else self.scalar_bin
        if not 0 <= b < n_points:
            raise ValidationError(f"scalar_bin {b} out of range for {n_points}-point sweep")
        return b


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """One measurement rendered as reals, with its ground truth carried along."""

    kind: FeatureKind
    values: np.ndarray
    position_cm: tuple[float, float]
    env: str

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise ValidationError("feature values must be a 1-D vector")
        if not np.all(np.isfinite(values)):
            raise ValidationError("feature vector contains non-finite values")

    def __len__(self) -> int:
        return len(self.values)


def feature_dim(kind: FeatureKind, repr: FeatureRepr, n_points: int) -> int:
    """Exact dimensionality of a feature vector for the given kind and representation."""
    per_block = {
        "rss": 1,
        "ctf": 2 if repr.mode == "scalar" else 2 * n_points,
        "fcf": 2 if repr.mode == "scalar" else 2 * (repr.max_lag + 1),
    }
    return sum(per_block[b] for b in kind.blocks)


def _interleave(values: np.ndarray) -> np.ndarray:
    out = np.empty(2 * len(values), dtype=np.float64)
    out[0::2] = values.real
    out[1::2] = values.imag
    return out


def build_feature(m: Measurement, kind: FeatureKind, repr: FeatureRepr) -> FeatureVector:
    """Concatenate the requested blocks, always in the order RSS, CTF, FCF."""
    n_points = m.ctf.grid.n_points
    parts: list[np.ndarray] = []
    for block in kind.blocks:
        if block == "rss":
            parts.append(np.array([m.rss_db], dtype=np.float64))
        elif block == "ctf":
            if repr.mode == "scalar":
                b = repr.resolve_bin(n_points)
                v = m.ctf.values[b]
                parts.append(np.array([v.real, v.imag], dtype=np.float64))
            else:
                parts.append(_interleave(m.ctf.values))
        elif block == "fcf":
            if repr.mode == "scalar":
                lag = min(repr.resolve_bin(n_points), repr.max_lag)
                if lag >= len(m.fcf):
                    raise ValidationError(
                        f"FCF lag {lag} not available (sweep has {len(m.fcf)} lags)"
                    )
                v = m.fcf.values[lag]
                parts.append(np.array([v.real, v.imag], dtype=np.float64))
            else:
                if repr.max_lag + 1 > len(m.fcf):
                    raise ValidationError(
                        f"repr wants FCF lags 0..{repr.max_lag} but sweep has {len(m.fcf)}"
                    )
                parts.append(_interleave(m.fcf.values[: repr.max_lag + 1]))
    values = np.concatenate(parts)
    return FeatureVector(kind=kind, values=values, position_cm=m.position_cm, env=m.env)


@dataclass(frozen=True, eq=False)
class ScalingParams:
    """Per-dimension z-score parameters fitted on a training set."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std


def fit_scaling(matrix: np.ndarray) -> ScalingParams:
    """Fit z-score parameters; zero-variance dimensions get unit scale with a warning."""
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    flat = std == 0.0
    if np.any(flat):
        warnings.warn(
            f"{int(flat.sum())} feature dimension(s) have zero variance; using unit scale",
            stacklevel=2,
        )
        std = np.where(flat, 1.0, std)
    return ScalingParams(mean=mean, std=std)


def build_matrix(
    measurements: MeasurementSet | Sequence[Measurement] | Iterable[Measurement],
    kind: FeatureKind,
    repr: FeatureRepr,
    scaling: str = "raw",
) -> tuple[list[FeatureVector], ScalingParams | None]:
    """Build one feature vector per measurement, optionally z-scored.

    With ``scaling="zscore"`` the parameters are fitted on this set and
    returned so they can be applied to later queries; with ``"raw"`` values
    pass through and the second element is None.
    """
    if scaling not in ("raw", "zscore"):
        raise ValidationError(f"scaling must be 'raw' or 'zscore', got {scaling!r}")
    vectors = [build_feature(m, kind, repr) for m in measurements]
    if not vectors:
        raise ValidationError("cannot build a feature matrix from an empty measurement set")
    if scaling == "raw":
        return vectors, None
    matrix = np.stack([v.values for v in vectors])
    params = fit_scaling(matrix)
    scaled = [
        FeatureVector(kind=v.kind, values=params.apply(v.values), position_cm=v.position_cm, env=v.env)
        for v in vectors
    ]
    return scaled, params
