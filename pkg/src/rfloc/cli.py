"""Command-line entry point.

Subcommands: generate / ingest / train / evaluate / localize / reproduce.
Every run is reproducible: all randomness flows from one explicit --seed,
flag values override config-file values override built-in defaults, and the
effective configuration is echoed into the output directory.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

from . import cascade as cascade_mod
from . import dataset as dataset_mod
from . import evaluation as eval_mod
from . import figures as figures_mod
from .channel import ENV_LABELS, EnvironmentProfile, default_profiles
from .dataset import GridGeometry, SplitSpec
from .errors import DataFileError, RflocError, ValidationError
from .features import FeatureKind, FeatureRepr
from .kvfile import read_kv, write_kv


class UsageError(RflocError):
    """Bad command line or config value."""


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

DEFAULTS = {
    "seed": "42",
    "grid": "14x14",
    "spacing-cm": "50.0",
    "iters": "10",
    "split": "0.75",
    "k1": "1",
    "k2": "1",
    "repr": "sweep",
    "max-lag": "16",
    "stage1-kind": "CTF+FCF",
    "policy-override": "",
    "threads": "1",
    "scaling": "raw",
    "val-fraction": "0.2",
    "envs": ",".join(ENV_LABELS),
    "k-values": "1-60",
    "snr-db": "",
    "kinds": ",".join(k.value for k in FeatureKind),
    "latency-reps": "200",
}

# Flags every subcommand accepts (besides its own paths).
_COMMON_FLAGS = ("seed", "threads")
_FLAGS_BY_COMMAND = {
    "generate": _COMMON_FLAGS + ("grid", "spacing-cm", "iters", "envs", "max-lag", "snr-db"),
    "ingest": _COMMON_FLAGS,
    "train": _COMMON_FLAGS
    + ("split", "k1", "k2", "repr", "max-lag", "stage1-kind", "policy-override", "scaling",
       "val-fraction", "envs"),
    "evaluate": _COMMON_FLAGS + ("k-values", "kinds", "latency-reps", "envs"),
    "localize": _COMMON_FLAGS,
    "reproduce": _COMMON_FLAGS
    + ("grid", "spacing-cm", "iters", "envs", "max-lag", "snr-db", "split", "k1", "k2",
       "repr", "stage1-kind", "policy-override", "scaling", "val-fraction", "k-values",
       "kinds", "latency-reps"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit(2); we reserve 2 for data errors
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="rfloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: _Parser, command: str) -> None:
        p.add_argument("--config", help="key-value config file; keys match flag names")
        p.add_argument("--out", required=command != "localize", help="output directory")
        for flag in _FLAGS_BY_COMMAND[command]:
            p.add_argument(f"--{flag}", default=None, help=argparse.SUPPRESS)

    p = sub.add_parser("generate", help="write synthetic per-environment datasets")
    p.add_argument("--profiles", help="profile definition file (defaults built in)")
    add_common(p, "generate")

    p = sub.add_parser("ingest", help="validate a measurement file and re-export it canonically")
    p.add_argument("--data", required=True, help="measurement CSV to ingest")
    p.add_argument("--manifest", help="manifest for --data (default: sibling .manifest)")
    add_common(p, "ingest")

    p = sub.add_parser("train", help="split datasets, fit the policy, fit the cascade")
    p.add_argument("--data", required=True, help="directory holding <env>.csv/<env>.manifest")
    add_common(p, "train")

    p = sub.add_parser("evaluate", help="write confusion/feature-table/k-sweep/latency reports")
    p.add_argument("--model", required=True, help="model directory written by train")
    p.add_argument("--data", required=True, help="splits directory written by train")
    add_common(p, "evaluate")

    p = sub.add_parser("localize", help="predict environment and position per input row")
    p.add_argument("--model", required=True, help="model directory written by train")
    p.add_argument("--input", required=True, help="measurement CSV of query rows")
    p.add_argument("--manifest", help="manifest for --input (default: sibling .manifest)")
    p.add_argument("--output", help="result CSV (default: stdout)")
    add_common(p, "localize")

    p = sub.add_parser("reproduce", help="chain generate, train, and evaluate end to end")
    p.add_argument("--profiles", help="profile definition file (defaults built in)")
    add_common(p, "reproduce")

    return parser


def _resolve_config(args: argparse.Namespace, command: str) -> dict[str, str]:
    """Defaults <- config file <- command line, in increasing precedence."""
    cfg = {flag: DEFAULTS[flag] for flag in _FLAGS_BY_COMMAND[command]}
    if args.config:
        file_cfg = read_kv(args.config)
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key, value in file_cfg.items():
            if key in cfg:
                cfg[key] = value
    for flag in _FLAGS_BY_COMMAND[command]:
        value = getattr(args, flag.replace("-", "_"), None)
        if value is not None:
            cfg[flag] = value
    return cfg


def _echo_config(cfg: dict[str, str], command: str, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = {"command": command}
    entries.update({k: cfg[k] for k in sorted(cfg)})
    write_kv(out_dir / "config_used.txt", entries, header="effective configuration")


def _parse_int(cfg: dict[str, str], key: str, minimum: int | None = None) -> int:
    try:
        value = int(cfg[key])
    except ValueError:
        raise UsageError(f"--{key} expects an integer, got {cfg[key]!r}")
    if minimum is not None and value < minimum:
        raise UsageError(f"--{key} must be >= {minimum}, got {value}")
    return value


def _parse_float(cfg: dict[str, str], key: str) -> float:
    try:
        return float(cfg[key])
    except ValueError:
        raise UsageError(f"--{key} expects a number, got {cfg[key]!r}")


def _parse_grid(cfg: dict[str, str]) -> tuple[int, int]:
    text = cfg["grid"].lower()
    parts = text.split("x")
    if len(parts) != 2:
        raise UsageError(f"--grid expects ROWSxCOLS (e.g. 14x14), got {cfg['grid']!r}")
    try:
        rows, cols = int(parts[0]), int(parts[1])
    except ValueError:
        raise UsageError(f"--grid expects ROWSxCOLS (e.g. 14x14), got {cfg['grid']!r}")
    return rows, cols


def _parse_envs(cfg: dict[str, str]) -> list[str]:
    envs = [e.strip() for e in cfg["envs"].split(",") if e.strip()]
    if not envs:
        raise UsageError("--envs lists no environments")
    return envs


def _parse_kinds(cfg: dict[str, str]) -> list[FeatureKind]:
    try:
        return [FeatureKind.parse(part) for part in cfg["kinds"].split(",") if part.strip()]
    except ValidationError as exc:
        raise UsageError(str(exc))


def _parse_k_values(cfg: dict[str, str]) -> list[int]:
    text = cfg["k-values"].strip()
    values: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = part.split("-")
                values.extend(range(int(lo), int(hi) + 1))
            elif part:
                values.append(int(part))
    except ValueError:
        raise UsageError(f"--k-values expects e.g. '1-60' or '1,5,10', got {text!r}")
    if not values or min(values) < 1:
        raise UsageError(f"--k-values must list positive integers, got {text!r}")
    return sorted(set(values))


def _parse_repr(cfg: dict[str, str]) -> FeatureRepr:
    mode = cfg["repr"].strip().lower()
    if mode not in ("scalar", "sweep"):
        raise UsageError(f"--repr expects 'scalar' or 'sweep', got {cfg['repr']!r}")
    return FeatureRepr(mode=mode, max_lag=_parse_int(cfg, "max-lag", minimum=0))


def _parse_scaling(cfg: dict[str, str]) -> str:
    scaling = cfg["scaling"].strip().lower()
    if scaling not in ("raw", "zscore"):
        raise UsageError(f"--scaling expects 'raw' or 'zscore', got {cfg['scaling']!r}")
    return scaling


def _parse_policy_override(cfg: dict[str, str]) -> dict[str, FeatureKind]:
    text = cfg["policy-override"].strip()
    if not text:
        return {}
    overrides: dict[str, FeatureKind] = {}
    for part in text.split(","):
        if "=" not in part:
            raise UsageError(f"--policy-override expects Env=KIND[,Env=KIND...], got {text!r}")
        env, _, kind = part.partition("=")
        try:
            overrides[env.strip()] = FeatureKind.parse(kind)
        except ValidationError as exc:
            raise UsageError(str(exc))
    return overrides


def load_profiles(path: str | Path) -> dict[str, EnvironmentProfile]:
    """Parse profile definitions from a key-value file.

    Keys are ``<label>.<field>`` with fields: count_range ("LO-HI"),
    delay_spread_ns, los_power_ratio, amplitude_decay_ns, and optionally
    shadow_sigma_db, phase_offset_rad, phase_jitter_rad.
    """
    kv = read_kv(path)
    grouped: dict[str, dict[str, str]] = {}
    for key, value in kv.items():
        label, _, fieldname = key.partition(".")
        if not fieldname:
            raise DataFileError(f"{path}: profile key {key!r} must look like '<label>.<field>'")
        grouped.setdefault(label, {})[fieldname] = value
    defaults = EnvironmentProfile("x", (1, 1), 1e-9, 1.0, 1e-9)
    profiles: dict[str, EnvironmentProfile] = {}
    for label, fields in grouped.items():
        try:
            lo, _, hi = fields["count_range"].partition("-")
            profiles[label] = EnvironmentProfile(
                label=label,
                multipath_count_range=(int(lo), int(hi)),
                delay_spread_s=float(fields["delay_spread_ns"]) * 1e-9,
                los_power_ratio=float(fields["los_power_ratio"]),
                amplitude_decay_s=float(fields["amplitude_decay_ns"]) * 1e-9,
                shadow_sigma_db=float(fields.get("shadow_sigma_db", defaults.shadow_sigma_db)),
                phase_offset_rad=float(fields.get("phase_offset_rad", defaults.phase_offset_rad)),
                phase_jitter_rad=float(fields.get("phase_jitter_rad", defaults.phase_jitter_rad)),
            )
        except (KeyError, ValueError) as exc:
            raise DataFileError(f"{path}: profile {label!r}: {exc}")
    return profiles


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args, "generate")
    out_dir = Path(args.out)
    _echo_config(cfg, "generate", out_dir)
    seed = _parse_int(cfg, "seed")
    rows, cols = _parse_grid(cfg)
    geometry = GridGeometry(rows=rows, cols=cols, spacing_cm=_parse_float(cfg, "spacing-cm"))
    iterations = _parse_int(cfg, "iters", minimum=1)
    max_lag = _parse_int(cfg, "max-lag", minimum=0)
    snr_db = float(cfg["snr-db"]) if cfg["snr-db"].strip() else None

    profiles = load_profiles(args.profiles) if getattr(args, "profiles", None) else default_profiles()
    envs = _parse_envs(cfg)
    missing = [env for env in envs if env not in profiles]
    if missing:
        raise UsageError(f"no profile defined for environment(s): {', '.join(missing)}")

    data_dir = out_dir
    data_dir.mkdir(parents=True, exist_ok=True)
    for env in envs:
        mset = dataset_mod.generate_synthetic(
            profiles[env], geometry, iterations, seed, max_lag=max_lag, snr_db=snr_db
        )
        dataset_mod.save_measurement_set(mset, data_dir / f"{env}.csv", data_dir / f"{env}.manifest")
        print(f"{env}: {len(mset)} measurements ({geometry.rows}x{geometry.cols} grid, "
              f"{iterations} iterations) -> {data_dir / (env + '.csv')}")
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args, "ingest")
    out_dir = Path(args.out)
    _echo_config(cfg, "ingest", out_dir)
    data_path = Path(args.data)
    manifest = args.manifest or data_path.with_suffix(".manifest")
    mset = dataset_mod.load_measurements(data_path, manifest)
    env = mset.env or "unknown"
    data_dir = out_dir
    data_dir.mkdir(parents=True, exist_ok=True)
    dataset_mod.save_measurement_set(mset, data_dir / f"{env}.csv", data_dir / f"{env}.manifest")
    points = len({m.grid_index for m in mset})
    print(f"{env}: ingested {len(mset)} rows covering {points} grid points "
          f"-> {data_dir / (env + '.csv')}")
    return EXIT_OK


def _load_env_sets(data_dir: Path, envs: list[str], prefix: str = ""):
    sets = {}
    for env in envs:
        data = data_dir / f"{prefix}{env}.csv"
        manifest = data_dir / f"{prefix}{env}.manifest"
        sets[env] = dataset_mod.load_measurements(data, manifest)
    return sets


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args, "train")
    out_dir = Path(args.out)
    _echo_config(cfg, "train", out_dir)
    seed = _parse_int(cfg, "seed")
    envs = _parse_envs(cfg)
    repr_ = _parse_repr(cfg)
    scaling = _parse_scaling(cfg)
    k1 = _parse_int(cfg, "k1", minimum=1)
    k2 = _parse_int(cfg, "k2", minimum=1)
    try:
        stage1_kind = FeatureKind.parse(cfg["stage1-kind"])
    except ValidationError as exc:
        raise UsageError(str(exc))
    overrides = _parse_policy_override(cfg)
    val_fraction = _parse_float(cfg, "val-fraction")

    full_sets = _load_env_sets(Path(args.data), envs)
    spec = SplitSpec(train_fraction=_parse_float(cfg, "split"), seed=seed)
    train_sets: dict[str, dataset_mod.MeasurementSet] = {}
    test_sets: dict[str, dataset_mod.MeasurementSet] = {}
    for env, mset in full_sets.items():
        train_sets[env], test_sets[env] = dataset_mod.split(mset, spec)

    splits_dir = out_dir / "splits"
    splits_dir.mkdir(parents=True, exist_ok=True)
    for env in envs:
        dataset_mod.save_measurement_set(
            train_sets[env], splits_dir / f"train_{env}.csv", splits_dir / f"train_{env}.manifest"
        )
        dataset_mod.save_measurement_set(
            test_sets[env], splits_dir / f"test_{env}.csv", splits_dir / f"test_{env}.manifest"
        )

    if set(overrides) >= set(envs):
        policy = cascade_mod.Policy(
            stage2_kind={env: overrides[env] for env in envs}, stage1_kind=stage1_kind
        )
        policy_note = "fully overridden"
    else:
        fit_parts, val_parts = {}, {}
        for env in envs:
            fit_parts[env], val_parts[env] = cascade_mod.carve_validation(
                train_sets[env], val_fraction
            )
        policy = cascade_mod.fit_policy(
            fit_parts, val_parts, repr=repr_, k2=k2, scaling=scaling, stage1_kind=stage1_kind
        )
        if overrides:
            policy = policy.with_overrides(overrides)
            policy_note = f"fitted on validation carve-out, overridden for {sorted(overrides)}"
        else:
            policy_note = "fitted on validation carve-out"

    model = cascade_mod.fit(train_sets, policy, repr_, k1=k1, k2=k2, scaling=scaling)
    cascade_mod.save_model(model, out_dir / "model")

    lines = [
        "training summary",
        f"environments: {', '.join(envs)}",
        f"stage-1 kind: {policy.stage1_kind.value} (k1={k1})",
        f"policy ({policy_note}):",
    ]
    lines += [f"  {env} -> {policy.kind_for(env).value}" for env in envs]
    lines += [
        f"train/test sizes: "
        + ", ".join(f"{env}={len(train_sets[env])}/{len(test_sets[env])}" for env in envs),
        f"feature repr: {repr_.mode} (max_lag={repr_.max_lag}), scaling: {scaling}, k2={k2}",
    ]
    (out_dir / "train_summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args, "evaluate")
    out_dir = Path(args.out)
    _echo_config(cfg, "evaluate", out_dir)
    threads = _parse_int(cfg, "threads", minimum=1)
    kinds = _parse_kinds(cfg)
    k_values = _parse_k_values(cfg)
    envs = _parse_envs(cfg)

    model = cascade_mod.load_model(Path(args.model))
    data_dir = Path(args.data)
    train_sets = _load_env_sets(data_dir, envs, prefix="train_")
    test_sets = _load_env_sets(data_dir, envs, prefix="test_")

    matrix = eval_mod.confusion(model, test_sets, threads=threads)
    eval_mod.write_confusion_csv(matrix, out_dir / "confusion.csv")

    table = eval_mod.feature_table(
        train_sets, test_sets, kinds, model.repr, k=model.k2,
        scaling="zscore" if model.stage1.scaling is not None else "raw", threads=threads,
    )
    eval_mod.write_feature_table_csv(table, out_dir / "feature_table.csv")

    sweep_rows = eval_mod.sweep_k(
        train_sets, test_sets, kinds, k_values, model.repr,
        scaling="zscore" if model.stage1.scaling is not None else "raw", threads=threads,
    )
    eval_mod.write_ksweep_csv(sweep_rows, out_dir / "ksweep.csv")

    cascade_full = eval_mod.cascade_rmse(model, test_sets, oracle_stage1=False, threads=threads)
    cascade_oracle = eval_mod.cascade_rmse(model, test_sets, oracle_stage1=True, threads=threads)

    queries = test_sets[envs[0]].measurements
    stats = eval_mod.time_queries(model, queries, repetitions=_parse_int(cfg, "latency-reps", 100))
    eval_mod.write_latency_csv(stats, out_dir / "latency.csv")

    report = eval_mod.EvalReport(  # validates the alpha column against its RMSE columns
        table=table, confusion=matrix, timing=stats,
        cascade_rmse_cm=cascade_full, oracle_rmse_cm=cascade_oracle,
    )

    figures_dir = out_dir / "figures"
    figures_mod.render_confusion(matrix, figures_dir / "confusion.png")
    figures_mod.render_feature_table(table, figures_dir / "feature_table.png")
    figures_mod.render_ksweeps(sweep_rows, figures_dir)

    lines = [
        "evaluation summary",
        f"stage-1 accuracy: {report.confusion.accuracy:.4f} over {report.confusion.total} test measurements",
        "per-environment localization RMSE (cm):",
    ]
    for env in envs:
        best = report.table.best_kind[env]
        alpha_txt = (
            f", alpha={report.table.alpha_percent[env]:.1f}%"
            if env in report.table.alpha_percent
            else ""
        )
        lines.append(
            f"  {env}: cascade={report.cascade_rmse_cm[env]:.2f}, "
            f"oracle-stage1={report.oracle_rmse_cm[env]:.2f}, "
            f"best-kind={best.value} ({report.table.rmse_cm[(env, best)]:.2f}){alpha_txt}"
        )
    # latency is wall-clock and lives only in latency.csv, keeping summary.txt
    # byte-stable across identically-configured runs
    lines.append("stage-1 query latency: see latency.csv (hardware-dependent, reported only)")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    print(
        f"measured latency: median={stats.median_us:.1f} us, p95={stats.p95_us:.1f} us "
        f"(model size {stats.model_size})"
    )
    return EXIT_OK


def cmd_localize(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args, "localize")
    if args.out:
        _echo_config(cfg, "localize", Path(args.out))
    model = cascade_mod.load_model(Path(args.model))
    input_path = Path(args.input)
    if args.manifest:
        manifest: object = Path(args.manifest)
    else:
        sibling = input_path.with_suffix(".manifest")
        manifest = sibling if sibling.is_file() else dict(dataset_mod.COLUMN_DEFAULTS)

    header = "input_row,predicted_env,pos_x_cm,pos_y_cm"
    mset = dataset_mod.load_measurements(input_path, manifest, allow_empty=True)
    out_lines = [header]
    if mset is not None:
        for row_index, m in enumerate(mset):
            result = cascade_mod.localize(model, m)
            out_lines.append(
                f"{row_index},{result.predicted_env},"
                f"{result.position_cm[0]!r},{result.position_cm[1]!r}"
            )
    text = "\n".join(out_lines) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        print(f"wrote {len(out_lines) - 1} result row(s) to {args.output}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_reproduce(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args, "reproduce")
    out_dir = Path(args.out)
    _echo_config(cfg, "reproduce", out_dir)

    gen_args = argparse.Namespace(
        config=None, out=str(out_dir / "data"), profiles=getattr(args, "profiles", None),
        **{f.replace("-", "_"): cfg[f] for f in _FLAGS_BY_COMMAND["generate"]},
    )
    cmd_generate(gen_args)

    train_args = argparse.Namespace(
        config=None, out=str(out_dir / "training"), data=str(out_dir / "data"),
        **{f.replace("-", "_"): cfg[f] for f in _FLAGS_BY_COMMAND["train"]},
    )
    cmd_train(train_args)

    eval_args = argparse.Namespace(
        config=None, out=str(out_dir / "reports"),
        model=str(out_dir / "training" / "model"),
        data=str(out_dir / "training" / "splits"),
        **{f.replace("-", "_"): cfg[f] for f in _FLAGS_BY_COMMAND["evaluate"]},
    )
    cmd_evaluate(eval_args)

    print(f"pipeline complete; reports under {out_dir / 'reports'}")
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "localize": cmd_localize,
    "reproduce": cmd_reproduce,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, DataFileError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RflocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
