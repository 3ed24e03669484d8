"""Figure rendering from benchmark CSV files.

Three plot kinds:

* risk_curve    -- mean KL risk vs sample size, one line per estimator,
                   shaded +-1 SE bands (aggregate CSV).
* regret_curve  -- same layout for the regret-over-separable-oracle column.
* smoothing     -- estimated probability vs observed count, solid line per
                   estimator, gray scatter of the true probabilities
                   (per-symbol CSV).

Images are deterministic for identical inputs: the Agg backend is forced and
embedded timestamps are disabled.
"""

from __future__ import annotations

import csv
import math
from collections import OrderedDict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["PlotError", "plot_risk", "plot_regret", "plot_smoothing"]

plt.rcParams.update({
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 9,
    "axes.labelsize": 11,
    "svg.hashsalt": "countsmooth-figures",
})

_AGGREGATE_MIN_COLUMNS = {"n", "estimator", "mean_risk", "se_risk",
                          "mean_regret", "se_regret"}
_SMOOTHING_META_COLUMNS = ("symbol", "count", "p_true")


class PlotError(ValueError):
    """Input CSV is unusable for the requested plot."""


def _read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PlotError(f"{path}: empty file")
        rows = list(reader)
    if not rows:
        raise PlotError(f"{path}: no data rows")
    return list(reader.fieldnames), rows


def _require_columns(path, fieldnames, needed) -> None:
    missing = set(needed) - set(fieldnames)
    if missing:
        raise PlotError(f"{path}: missing columns {sorted(missing)}")


def _save(fig, out_path) -> None:
    # strip writer metadata so identical inputs give identical bytes
    suffix = str(out_path).lower()
    if suffix.endswith(".svg"):
        metadata = {"Date": None}
    elif suffix.endswith(".png"):
        metadata = {"Software": None}
    else:
        metadata = None
    fig.savefig(out_path, metadata=metadata, bbox_inches="tight")
    plt.close(fig)


def _curve_plot(csv_path, out_path, value_col, se_col, ylabel,
                logx=False, logy=False):
    fieldnames, rows = _read_csv(csv_path)
    _require_columns(csv_path, fieldnames, _AGGREGATE_MIN_COLUMNS)

    series: "OrderedDict[str, list[tuple[float, float, float]]]" = OrderedDict()
    for row in rows:
        value = float(row[value_col])
        if math.isnan(value):
            continue
        series.setdefault(row["estimator"], []).append(
            (float(row["n"]), value, float(row[se_col]))
        )
    if not series:
        raise PlotError(f"{csv_path}: no finite values in {value_col}")

    fig, ax = plt.subplots()
    for name, points in series.items():
        points.sort(key=lambda t: t[0])
        ns = [p[0] for p in points]
        means = [p[1] for p in points]
        lo = [p[1] - p[2] for p in points]
        hi = [p[1] + p[2] for p in points]
        line, = ax.plot(ns, means, marker="o", markersize=3.5, label=name)
        ax.fill_between(ns, lo, hi, alpha=0.2, color=line.get_color())
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("sample size n")
    ax.set_ylabel(ylabel)
    ax.legend()
    _save(fig, out_path)


def plot_risk(csv_path, out_path, logx=False, logy=False) -> None:
    """Mean KL risk vs n with SE bands from an aggregate benchmark CSV."""
    _curve_plot(csv_path, out_path, "mean_risk", "se_risk", "KL risk",
                logx=logx, logy=logy)


def plot_regret(csv_path, out_path, logx=False, logy=False) -> None:
    """Mean regret over the separable oracle vs n with SE bands."""
    _curve_plot(csv_path, out_path, "mean_regret", "se_regret",
                "KL regret over separable oracle", logx=logx, logy=logy)


def plot_smoothing(csv_path, out_path, logx=False, logy=False) -> None:
    """Estimated probability vs observed count per estimator, plus truth.

    Estimator columns are everything beyond (symbol, count, p_true). Each
    estimator is drawn as a solid curve through the distinct counts (taking
    the per-count mean, which is exact for count-separable estimators); the
    true probabilities appear as a gray scatter.
    """
    fieldnames, rows = _read_csv(csv_path)
    _require_columns(csv_path, fieldnames, _SMOOTHING_META_COLUMNS)
    estimators = [c for c in fieldnames if c not in _SMOOTHING_META_COLUMNS]
    if not estimators:
        raise PlotError(f"{csv_path}: no estimator columns")

    counts = [int(row["count"]) for row in rows]
    truth = [float(row["p_true"]) for row in rows]

    fig, ax = plt.subplots()
    ax.scatter(counts, truth, s=6, color="0.6", alpha=0.5, label="truth",
               zorder=1)
    for name in estimators:
        per_count: dict[int, list[float]] = {}
        for row in rows:
            per_count.setdefault(int(row["count"]), []).append(float(row[name]))
        xs = sorted(per_count)
        ys = [sum(per_count[x]) / len(per_count[x]) for x in xs]
        ax.plot(xs, ys, lw=1.6, label=name, zorder=2)
    if logx:
        ax.set_xscale("symlog")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("observed count")
    ax.set_ylabel("estimated probability")
    ax.legend()
    _save(fig, out_path)
