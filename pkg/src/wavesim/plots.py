"""Static SVG charts of result CSVs.

Output is byte-stable for identical inputs: the SVG id salt is fixed and the
creation date is left out of the metadata.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import metric_columns, read_table, require  # noqa: E402
from .errors import IoError, SchemaError  # noqa: E402

LINE_KINDS = {"collision": "collision_rate", "mo": "mo_rate",
              "loss": "mean_loss", "sinr": "mean_sinr_db"}
SCATTER_KINDS = {"scatter": "diag_dominance", "entropy": "entropy_rate"}
KINDS = tuple(LINE_KINDS) + tuple(SCATTER_KINDS)
SWEEP_AXES = ("p", "p12", "p_miss", "p21", "eta")


def _policies(table, suffix):
    return [c[: -len(suffix) - 1] for c in table if c.endswith("_" + suffix)]


def _sweep_axis(table):
    for name in SWEEP_AXES:
        if name in table and np.unique(table[name]).size > 1:
            return name
    raise SchemaError(["swept parameter column (" + " | ".join(SWEEP_AXES) + ")"])


def _save(fig, path):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return Path(path)


def line_chart(table, metric, x=None):
    x = x or _sweep_axis(table)
    require(table, [x])
    names = _policies(table, metric)
    if not names:
        raise SchemaError([f"<policy>_{metric}"])
    grid = np.unique(table[x])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name in names:
        y = table[f"{name}_{metric}"]
        ax.plot(grid, [y[table[x] == g].mean() for g in grid], marker="o", label=name.upper())
    ax.set_xlabel(x)
    ax.set_ylabel(metric.replace("_", " "))
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def scatter_chart(table, x, y=None):
    if x == "entropy_rate" and x not in table and "entropy_rate_bits" in table:
        x = "entropy_rate_bits"
    require(table, [x])
    if y is not None:
        require(table, [y])
        ys = [y]
    else:
        ys = [c for c in metric_columns(table) if c.endswith("_collision_rate")] \
            or [c for c in metric_columns(table) if "mean_loss" in c]
    if not ys:
        raise SchemaError(["<policy>_collision_rate | mean_loss_a"])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for col in ys:
        ax.scatter(table[x], table[col], s=10, label=col)
    ax.set_xlabel(x)
    ax.legend(fontsize="small")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def render_plots(path, kinds, out_dir=None, x=None, y=None):
    """Render one SVG per requested chart kind; returns the written paths."""
    plt.rcParams["svg.hashsalt"] = "wavesim"
    table = read_table(path)
    path = Path(path)
    out_dir = Path(out_dir) if out_dir is not None else path.parent
    written = []
    for kind in kinds:
        if kind in LINE_KINDS:
            fig = line_chart(table, LINE_KINDS[kind], x)
        elif kind in SCATTER_KINDS:
            fig = scatter_chart(table, x or SCATTER_KINDS[kind], y)
        else:
            raise ValueError(f"unknown chart kind {kind!r} (choose from {', '.join(KINDS)})")
        written.append(_save(fig, out_dir / f"{path.stem}_{kind}.svg"))
    return written
