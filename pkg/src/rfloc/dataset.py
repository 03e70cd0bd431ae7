"""Fingerprint datasets: synthetic generation, delimited-text I/O, train/test split.

A dataset is one environment's collection of measurements taken on a survey
grid, several iterations per grid point. On disk each dataset is a CSV file
(complex sweeps stored as interleaved real/imaginary column pairs) plus a
key-value manifest mapping column names to roles and carrying the grid
metadata. Column-name defaults are documented in the repository README.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .channel import (
    CtfSweep,
    EnvironmentProfile,
    FcfSweep,
    FrequencyGrid,
    apply_awgn,
    compute_fcf,
    compute_rss,
    digest_seed,
    draw_realization,
    seeded_rng,
    synth_ctf,
)
from .errors import DataFileError, ValidationError
from .kvfile import read_kv, write_kv

DEFAULT_MAX_LAG = 16

#: Default column names written by :func:`save_measurement_set`.
COLUMN_DEFAULTS = {
    "env": "env",
    "grid_index": "grid_index",
    "position_x": "pos_x_cm",
    "position_y": "pos_y_cm",
    "iteration": "iteration",
    "rss": "rss_db",
    "ctf_real_prefix": "ctf_re_",
    "ctf_imag_prefix": "ctf_im_",
    "fcf_real_prefix": "fcf_re_",
    "fcf_imag_prefix": "fcf_im_",
}


@dataclass(frozen=True)
class GridGeometry:
    """Survey grid: rows x cols points, row-major indexing, fixed spacing in cm."""

    rows: int = 14
    cols: int = 14
    spacing_cm: float = 50.0

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValidationError(f"grid must have at least one point, got {self.rows}x{self.cols}")
        if not self.spacing_cm > 0.0:
            raise ValidationError("grid spacing must be positive")

    @property
    def n_points(self) -> int:
        return self.rows * self.cols

    def position(self, grid_index: int) -> tuple[float, float]:
        if not 0 <= grid_index < self.n_points:
            raise ValidationError(f"grid_index {grid_index} out of range for {self.rows}x{self.cols}")
        row, col = divmod(grid_index, self.cols)
        return (col * self.spacing_cm, row * self.spacing_cm)

    def contains(self, position: tuple[float, float], tol_cm: float = 1e-6) -> bool:
        """True if the position coincides with a grid point (within tol)."""
        x, y = position
        col = round(x / self.spacing_cm)
        row = round(y / self.spacing_cm)
        if not (0 <= col < self.cols and 0 <= row < self.rows):
            return False
        return abs(x - col * self.spacing_cm) <= tol_cm and abs(y - row * self.spacing_cm) <= tol_cm


@dataclass(frozen=True, eq=False)
class Measurement:
    """One observation at a grid point: RSS scalar, CTF sweep, FCF sweep, ground truth."""

    env: str
    grid_index: int
    position_cm: tuple[float, float]
    iteration: int
    rss_db: float
    ctf: CtfSweep
    fcf: FcfSweep

    def __post_init__(self) -> None:
        if self.grid_index < 0:
            raise ValidationError(f"grid_index must be >= 0, got {self.grid_index}")
        if self.iteration < 0:
            raise ValidationError(f"iteration must be >= 0, got {self.iteration}")
        if not all(math.isfinite(c) for c in self.position_cm):
            raise ValidationError(f"position must be finite, got {self.position_cm}")
        if not math.isfinite(self.rss_db):
            raise ValidationError(f"rss_db must be finite, got {self.rss_db}")


@dataclass(eq=False)
class MeasurementSet:
    """All measurements of one environment plus the metadata needed to interpret them."""

    env: str
    freq_grid: FrequencyGrid
    measurements: list[Measurement]
    geometry: GridGeometry | None = None
    provenance: str = ""

    def __post_init__(self) -> None:
        for m in self.measurements:
            if m.env != self.env:
                raise ValidationError(
                    f"measurement labeled {m.env!r} in set for environment {self.env!r}"
                )
            if m.ctf.grid != self.freq_grid:
                raise ValidationError("all measurements in a set must share one frequency grid")
            if self.geometry is not None and not self.geometry.contains(m.position_cm):
                raise ValidationError(
                    f"position {m.position_cm} does not lie on the declared "
                    f"{self.geometry.rows}x{self.geometry.cols} grid"
                )

    def __len__(self) -> int:
        return len(self.measurements)

    def __iter__(self):
        return iter(self.measurements)


@dataclass(frozen=True)
class SplitSpec:
    """Train/test split parameters; stratification keeps every grid point in both parts."""

    train_fraction: float = 0.75
    seed: int = 0
    stratify_by_grid_point: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


def generate_synthetic(
    profile: EnvironmentProfile,
    geometry: GridGeometry,
    iterations: int,
    seed: int,
    *,
    freq_grid: FrequencyGrid | None = None,
    max_lag: int = DEFAULT_MAX_LAG,
    snr_db: float | None = None,
) -> MeasurementSet:
    """Simulate the survey protocol: one measurement per (grid point, iteration).

    The channel structure at each point is held fixed across iterations while
    phases are re-drawn per iteration, mimicking repeated observations of a
    static environment. Output order is (grid_index, iteration), so the
    result is byte-reproducible for a given seed.
    """
    if iterations < 1:
        raise ValidationError(f"iterations must be >= 1, got {iterations}")
    grid = freq_grid if freq_grid is not None else FrequencyGrid()
    measurements: list[Measurement] = []
    for grid_index in range(geometry.n_points):
        position = geometry.position(grid_index)
        for iteration in range(iterations):
            realization = draw_realization(profile, position, seed, phase_salt=iteration)
            ctf = synth_ctf(realization, grid)
            if snr_db is not None:
                noise_seed = digest_seed("meas-noise", int(seed), grid_index, iteration)
                ctf = apply_awgn(ctf, snr_db, noise_seed)
            fcf = compute_fcf(ctf, max_lag)
            rss = compute_rss(ctf)
            measurements.append(
                Measurement(
                    env=profile.label,
                    grid_index=grid_index,
                    position_cm=position,
                    iteration=iteration,
                    rss_db=rss,
                    ctf=ctf,
                    fcf=fcf,
                )
            )
    provenance = f"synthetic profile={profile.label} seed={seed} iterations={iterations}"
    return MeasurementSet(
        env=profile.label,
        freq_grid=grid,
        measurements=measurements,
        geometry=geometry,
        provenance=provenance,
    )


def _cumulative_counts(sizes: Sequence[int], fraction: float) -> list[int]:
    """Per-group train counts whose running total tracks `fraction` of the running size."""
    counts = []
    before = 0.0
    floor_before = 0
    for size in sizes:
        after = before + size * fraction
        floor_after = math.floor(after + 1e-9)
        counts.append(floor_after - floor_before)
        before = after
        floor_before = floor_after
    return counts


def split(mset: MeasurementSet, spec: SplitSpec) -> tuple[MeasurementSet, MeasurementSet]:
    """Partition a set into disjoint, exhaustive train/test subsets.

    With stratification each grid point contributes its own fraction of
    iterations (off by at most one sample per point); without it the split is
    a single global shuffle. Deterministic for a given spec.
    """
    if len(mset) == 0:
        raise ValidationError("cannot split an empty measurement set")

    if spec.stratify_by_grid_point:
        groups: dict[int, list[int]] = {}
        for idx, m in enumerate(mset.measurements):
            groups.setdefault(m.grid_index, []).append(idx)
        ordered_points = sorted(groups)
        sizes = [len(groups[p]) for p in ordered_points]
        counts = _cumulative_counts(sizes, spec.train_fraction)
        train_idx: list[int] = []
        test_idx: list[int] = []
        for point, n_train in zip(ordered_points, counts):
            members = groups[point]
            rng = seeded_rng("split", spec.seed, point)
            order = rng.permutation(len(members))
            chosen = [members[i] for i in order]
            train_idx.extend(chosen[:n_train])
            test_idx.extend(chosen[n_train:])
    else:
        rng = seeded_rng("split", spec.seed)
        order = rng.permutation(len(mset))
        n_train = math.floor(len(mset) * spec.train_fraction + 1e-9)
        train_idx = list(order[:n_train])
        test_idx = list(order[n_train:])

    if not train_idx or not test_idx:
        raise ValidationError(
            f"set of {len(mset)} measurements is too small for train_fraction="
            f"{spec.train_fraction}"
        )

    train_idx.sort()
    test_idx.sort()
    train = [mset.measurements[i] for i in train_idx]
    test = [mset.measurements[i] for i in test_idx]
    make = lambda part, tag: MeasurementSet(
        env=mset.env,
        freq_grid=mset.freq_grid,
        measurements=part,
        geometry=mset.geometry,
        provenance=f"{mset.provenance} | split={tag} fraction={spec.train_fraction} seed={spec.seed}",
    )
    return make(train, "train"), make(test, "test")


def _format_float(x: float) -> str:
    return repr(float(x))


def default_manifest(mset: MeasurementSet) -> dict[str, str]:
    entries = dict(COLUMN_DEFAULTS)
    entries["environment"] = mset.env
    entries["center_hz"] = _format_float(mset.freq_grid.center_hz)
    entries["span_hz"] = _format_float(mset.freq_grid.span_hz)
    entries["n_points"] = str(mset.freq_grid.n_points)
    if mset.measurements:
        entries["max_lag"] = str(len(mset.measurements[0].fcf) - 1)
    if mset.geometry is not None:
        entries["rows"] = str(mset.geometry.rows)
        entries["cols"] = str(mset.geometry.cols)
        entries["spacing_cm"] = _format_float(mset.geometry.spacing_cm)
    if mset.provenance:
        entries["provenance"] = mset.provenance
    return entries


def save_measurement_set(
    mset: MeasurementSet,
    data_path: str | Path,
    manifest_path: str | Path | None = None,
) -> Path:
    """Write the CSV data file and its manifest; returns the manifest path."""
    data_path = Path(data_path)
    if manifest_path is None:
        manifest_path = data_path.with_suffix(data_path.suffix + ".manifest")
        if data_path.suffix == ".csv":
            manifest_path = data_path.with_suffix(".manifest")
    manifest_path = Path(manifest_path)

    if not mset.measurements:
        raise ValidationError("refusing to save an empty measurement set")
    n_points = mset.freq_grid.n_points
    n_lags = len(mset.measurements[0].fcf)

    cols = [
        COLUMN_DEFAULTS["env"],
        COLUMN_DEFAULTS["grid_index"],
        COLUMN_DEFAULTS["position_x"],
        COLUMN_DEFAULTS["position_y"],
        COLUMN_DEFAULTS["iteration"],
        COLUMN_DEFAULTS["rss"],
    ]
    for i in range(n_points):
        cols.append(f"{COLUMN_DEFAULTS['ctf_real_prefix']}{i}")
        cols.append(f"{COLUMN_DEFAULTS['ctf_imag_prefix']}{i}")
    for i in range(n_lags):
        cols.append(f"{COLUMN_DEFAULTS['fcf_real_prefix']}{i}")
        cols.append(f"{COLUMN_DEFAULTS['fcf_imag_prefix']}{i}")

    with open(data_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for m in mset.measurements:
            if len(m.fcf) != n_lags:
                raise ValidationError("inconsistent FCF lengths within one measurement set")
            row = [
                m.env,
                str(m.grid_index),
                _format_float(m.position_cm[0]),
                _format_float(m.position_cm[1]),
                str(m.iteration),
                _format_float(m.rss_db),
            ]
            for v in m.ctf.values:
                row.append(_format_float(v.real))
                row.append(_format_float(v.imag))
            for v in m.fcf.values:
                row.append(_format_float(v.real))
                row.append(_format_float(v.imag))
            writer.writerow(row)

    write_kv(manifest_path, default_manifest(mset), header="dataset manifest")
    return manifest_path


def _collect_sweep_columns(header: list[str], real_prefix: str, imag_prefix: str, source: str):
    """Pair up interleaved real/imag sweep columns, ordered by numeric suffix."""
    def indexed(prefix: str) -> dict[int, int]:
        found: dict[int, int] = {}
        for col_pos, name in enumerate(header):
            if name.startswith(prefix):
                suffix = name[len(prefix):]
                if suffix.isdigit():
                    found[int(suffix)] = col_pos
        return found

    reals = indexed(real_prefix)
    imags = indexed(imag_prefix)
    if not reals and not imags:
        return None
    if sorted(reals) != sorted(imags):
        raise DataFileError(
            f"{source}: mismatched real/imag sweep columns for prefixes "
            f"{real_prefix!r}/{imag_prefix!r}"
        )
    order = sorted(reals)
    if order != list(range(len(order))):
        raise DataFileError(
            f"{source}: sweep column indices for {real_prefix!r} must be 0..N-1, got {order}"
        )
    return [(reals[i], imags[i]) for i in order]


def _parse_float(text: str, source: str, lineno: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataFileError(f"{source}: line {lineno}: column {column!r}: not a number: {text!r}")
    if not math.isfinite(value):
        raise DataFileError(
            f"{source}: line {lineno}: column {column!r}: non-finite value {text!r}"
        )
    return value


def load_measurements(
    path: str | Path,
    manifest: str | Path | Mapping[str, str],
    allow_empty: bool = False,
) -> MeasurementSet | None:
    """Load a delimited measurement file according to its manifest.

    Rows failing validation are reported with their line number. Missing FCF
    columns are recomputed from the CTF (manifest key ``max_lag``, default
    16); a missing RSS column is recomputed as wideband average power.
    With ``allow_empty`` an empty or header-only file returns None instead of
    raising.
    """
    path = Path(path)
    if not path.is_file():
        raise DataFileError(f"measurement file not found: {path}")
    mf: Mapping[str, str] = manifest if isinstance(manifest, Mapping) else read_kv(manifest)
    source = str(path)

    roles = {key: mf.get(key, default) for key, default in COLUMN_DEFAULTS.items()}

    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            if allow_empty:
                return None
            raise DataFileError(f"{source}: empty file")
        col_of = {name: i for i, name in enumerate(header)}

        def col(role: str, required: bool) -> int | None:
            name = roles[role]
            if name in col_of:
                return col_of[name]
            if required:
                raise DataFileError(f"{source}: required column {name!r} (role {role!r}) missing")
            return None

        env_col = col("env", required=False)
        gid_col = col("grid_index", required=False)
        x_col = col("position_x", required=True)
        y_col = col("position_y", required=True)
        iter_col = col("iteration", required=False)
        rss_col = col("rss", required=False)
        ctf_cols = _collect_sweep_columns(
            header, roles["ctf_real_prefix"], roles["ctf_imag_prefix"], source
        )
        fcf_cols = _collect_sweep_columns(
            header, roles["fcf_real_prefix"], roles["fcf_imag_prefix"], source
        )
        if ctf_cols is None:
            raise DataFileError(
                f"{source}: no CTF columns found for prefixes "
                f"{roles['ctf_real_prefix']!r}/{roles['ctf_imag_prefix']!r}"
            )

        n_points = len(ctf_cols)
        declared_n = int(mf["n_points"]) if "n_points" in mf else n_points
        if declared_n != n_points:
            raise DataFileError(
                f"{source}: manifest declares n_points={declared_n} but file has {n_points} CTF columns"
            )
        freq_grid = FrequencyGrid(
            center_hz=float(mf.get("center_hz", FrequencyGrid.center_hz)),
            span_hz=float(mf.get("span_hz", FrequencyGrid.span_hz)),
            n_points=n_points,
        )
        max_lag = int(mf.get("max_lag", DEFAULT_MAX_LAG))
        declared_env = mf.get("environment")

        geometry = None
        if "rows" in mf and "cols" in mf and "spacing_cm" in mf:
            geometry = GridGeometry(int(mf["rows"]), int(mf["cols"]), float(mf["spacing_cm"]))

        measurements: list[Measurement] = []
        iter_counter: dict[int, int] = {}
        row_ordinal = 0
        env_seen: str | None = declared_env
        for row in reader:
            lineno = reader.line_num
            if len(row) != len(header):
                raise DataFileError(
                    f"{source}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            env = row[env_col] if env_col is not None else (declared_env or "")
            if declared_env is not None and env_col is not None and env != declared_env:
                raise DataFileError(
                    f"{source}: line {lineno}: environment {env!r} does not match "
                    f"manifest environment {declared_env!r}"
                )
            if env_seen is None:
                env_seen = env
            elif env != env_seen:
                raise DataFileError(
                    f"{source}: line {lineno}: mixed environment labels "
                    f"({env!r} after {env_seen!r}); one file holds one environment"
                )

            x = _parse_float(row[x_col], source, lineno, roles["position_x"])
            y = _parse_float(row[y_col], source, lineno, roles["position_y"])
            if gid_col is not None:
                try:
                    grid_index = int(row[gid_col])
                except ValueError:
                    raise DataFileError(
                        f"{source}: line {lineno}: bad grid index {row[gid_col]!r}"
                    )
            else:
                grid_index = row_ordinal  # fallback: one pseudo-point per row

            if iter_col is not None:
                try:
                    iteration = int(row[iter_col])
                except ValueError:
                    raise DataFileError(
                        f"{source}: line {lineno}: bad iteration {row[iter_col]!r}"
                    )
            else:
                iteration = iter_counter.get(grid_index, 0)
                iter_counter[grid_index] = iteration + 1
            row_ordinal += 1

            ctf_values = np.empty(n_points, dtype=np.complex128)
            for i, (re_col, im_col) in enumerate(ctf_cols):
                re = _parse_float(row[re_col], source, lineno, header[re_col])
                im = _parse_float(row[im_col], source, lineno, header[im_col])
                ctf_values[i] = complex(re, im)
            ctf = CtfSweep(grid=freq_grid, values=ctf_values)

            if fcf_cols is not None:
                fcf_values = np.empty(len(fcf_cols), dtype=np.complex128)
                for i, (re_col, im_col) in enumerate(fcf_cols):
                    re = _parse_float(row[re_col], source, lineno, header[re_col])
                    im = _parse_float(row[im_col], source, lineno, header[im_col])
                    fcf_values[i] = complex(re, im)
                lags = np.arange(len(fcf_cols), dtype=np.float64) * freq_grid.delta_hz
                fcf = FcfSweep(lags_hz=lags, values=fcf_values)
            else:
                fcf = compute_fcf(ctf, min(max_lag, n_points - 1))

            if rss_col is not None:
                rss = _parse_float(row[rss_col], source, lineno, roles["rss"])
            else:
                rss = compute_rss(ctf)

            try:
                measurements.append(
                    Measurement(
                        env=env,
                        grid_index=grid_index,
                        position_cm=(x, y),
                        iteration=iteration,
                        rss_db=rss,
                        ctf=ctf,
                        fcf=fcf,
                    )
                )
            except ValidationError as exc:
                raise DataFileError(f"{source}: line {lineno}: {exc}")

    if not measurements:
        if allow_empty:
            return None
        raise DataFileError(f"{source}: no data rows")
    try:
        return MeasurementSet(
            env=env_seen or "",
            freq_grid=freq_grid,
            measurements=measurements,
            geometry=geometry,
            provenance=mf.get("provenance", f"loaded from {path.name}"),
        )
    except ValidationError as exc:
        raise DataFileError(f"{source}: {exc}")
