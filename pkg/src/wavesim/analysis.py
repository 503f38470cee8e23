"""Summaries of result CSVs: column means, correlations, dominance fractions."""

from __future__ import annotations

import csv
from collections import Counter
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import IoError, SchemaError

UNDEFINED = "undefined"

ANALYTIC_ALIASES = {
    "entropy_rate": ("entropy_rate", "entropy_rate_bits"),
    "diag_dominance": ("diag_dominance",),
}
METRIC_SUFFIXES = ("_collision_rate", "_mo_rate", "_mean_loss", "_mean_sinr_db")
VERDICT_COLUMNS = ("fosd", "sosd")


def correlation(x, y, method="pearson"):
    """Correlation of two samples, or ``None`` when either has no variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    if method == "pearson":
        return float(stats.pearsonr(x, y)[0])
    if method == "spearman":
        return float(stats.spearmanr(x, y)[0])
    raise ValueError(f"unknown method {method!r}")


def read_table(path):
    """Read a CSV into a dict of columns.

    Numeric columns become float arrays, the rest stay as lists of strings.
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            records = list(reader)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    table = {}
    for col in header:
        raw = [r[col] for r in records]
        try:
            table[col] = np.array([float(v) for v in raw])
        except ValueError:
            table[col] = raw
    return table


def require(table, columns):
    missing = [c for c in columns if c not in table]
    if missing:
        raise SchemaError(missing)


def _resolve_analytics(table):
    found, missing = {}, []
    for name, aliases in ANALYTIC_ALIASES.items():
        hit = next((a for a in aliases if a in table), None)
        if hit is None:
            missing.append(name)
        else:
            found[name] = hit
    if missing:
        raise SchemaError(missing)
    return found


def metric_columns(table):
    cols = [c for c in table if c.endswith(METRIC_SUFFIXES)]
    cols += [c for c in ("mean_loss_a", "mean_loss_b") if c in table]
    return cols


def analyze(path, out=None):
    """Aggregate a result CSV.

    Returns summary rows ``{stat, x, y, value}``: the mean of every metric,
    Pearson and Spearman correlations of each channel analytic with each
    metric, and the fraction of each dominance verdict. Writes them to
    ``out`` when given.
    """
    table = read_table(path)
    analytics = _resolve_analytics(table)
    metrics = metric_columns(table)
    if not metrics:
        raise SchemaError(["<policy>_collision_rate | <policy>_mean_loss"])
    rows = []
    for m in metrics:
        rows.append({"stat": "mean", "x": "", "y": m, "value": float(np.mean(table[m]))})
    for name, col in analytics.items():
        for m in metrics:
            for method in ("pearson", "spearman"):
                rows.append({"stat": method, "x": name, "y": m,
                             "value": correlation(table[col], table[m], method)})
    for col in VERDICT_COLUMNS:
        if col in table:
            counts = Counter(table[col])
            total = sum(counts.values())
            for verdict in sorted(counts):
                rows.append({"stat": "fraction", "x": col, "y": verdict,
                             "value": counts[verdict] / total})
    if out is not None:
        write_summary(rows, out)
    return rows


def format_value(v):
    return UNDEFINED if v is None else f"{v:.6g}"


def write_summary(rows, path):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stat", "x", "y", "value"])
            for r in rows:
                v = r["value"]
                w.writerow([r["stat"], r["x"], r["y"], UNDEFINED if v is None else repr(float(v))])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def format_summary(rows):
    lines = []
    for r in rows:
        label = f"{r['stat']}({r['x']}, {r['y']})" if r["x"] else f"{r['stat']}({r['y']})"
        lines.append(f"{label:<60} {format_value(r['value'])}")
    return "\n".join(lines)
