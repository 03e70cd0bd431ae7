"""Matplotlib renderings of the evaluation reports, written to image files.

Uses the object-oriented API with an Agg canvas directly, so no backend or
global pyplot state is touched and output is reproducible byte-for-byte.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .evaluation import ConfusionMatrix, FeatureTable
from .features import FeatureKind

_DPI = 150


def _save(fig: Figure, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=_DPI)
    return path


def render_confusion(matrix: ConfusionMatrix, path: str | Path) -> Path:
    """Row-normalized percentage heatmap with per-cell annotations."""
    pct = matrix.row_percent()
    n = len(matrix.labels)
    fig = Figure(figsize=(1.4 * n + 2.2, 1.2 * n + 1.6))
    ax = fig.add_subplot(111)
    im = ax.imshow(pct, cmap="Blues", vmin=0.0, vmax=100.0)
    ax.set_xticks(range(n), matrix.labels, rotation=30, ha="right")
    ax.set_yticks(range(n), matrix.labels)
    ax.set_xlabel("Predicted environment")
    ax.set_ylabel("True environment")
    ax.set_title(f"Environment classification (accuracy {matrix.accuracy * 100:.1f}%)")
    for i in range(n):
        for j in range(n):
            color = "white" if pct[i, j] > 50.0 else "black"
            ax.text(j, i, f"{pct[i, j]:.1f}", ha="center", va="center", color=color, fontsize=9)
    fig.colorbar(im, ax=ax, label="% of true-row samples")
    fig.tight_layout()
    return _save(fig, path)


def render_feature_table(table: FeatureTable, path: str | Path) -> Path:
    """Grouped bars: localization RMSE per feature kind, one group per environment."""
    envs = table.environments
    kinds = table.kinds
    width = 0.8 / len(kinds)
    x = np.arange(len(envs), dtype=np.float64)
    fig = Figure(figsize=(max(7.0, 1.9 * len(envs)), 4.5))
    ax = fig.add_subplot(111)
    for i, kind in enumerate(kinds):
        values = [table.rmse_cm[(env, kind)] for env in envs]
        ax.bar(x + (i - (len(kinds) - 1) / 2) * width, values, width, label=kind.value)
    ax.set_xticks(x, envs)
    ax.set_ylabel("RMSE (cm)")
    ax.set_title("Localization error by feature kind")
    ax.legend(fontsize=8, ncols=2)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def render_ksweeps(
    rows: Sequence[tuple[str, FeatureKind, int, float]],
    out_dir: str | Path,
    prefix: str = "ksweep",
) -> list[Path]:
    """One figure per environment: RMSE vs k, one line per feature kind."""
    curves: dict[str, dict[FeatureKind, list[tuple[int, float]]]] = {}
    for env, kind, k, value in rows:
        curves.setdefault(env, {}).setdefault(kind, []).append((k, value))
    paths = []
    for env, by_kind in curves.items():
        fig = Figure(figsize=(7.0, 4.5))
        ax = fig.add_subplot(111)
        for kind, points in by_kind.items():
            points = sorted(points)
            ax.plot([p[0] for p in points], [p[1] for p in points], label=kind.value, linewidth=1.6)
        ax.set_xlabel("k (number of neighbors)")
        ax.set_ylabel("RMSE (cm)")
        ax.set_title(f"{env}: localization error vs k")
        ax.legend(fontsize=8, ncols=2)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        paths.append(_save(fig, Path(out_dir) / f"{prefix}_{env}.png"))
    return paths
