"""Sweep figures: mean episode cost with standard-error bands.

One line per group (by default per sample count), the chosen sweep parameter
on a log-scale x-axis. Failure-flagged rows are excluded from the means and
reported in the caption annotation. Plotting is read-only and deterministic:
the same CSV yields byte-identical plotted data series.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .table import SweepTable, load_sweep_csv

X_AXES = ("gamma", "param")


def sweep_series(table: SweepTable, x_axis: str = "gamma", group_by: str = "n_samples"):
    """Aggregate rows into {group value: (x, mean, standard error)}.

    Means are over seeds within each (group, x) cell; the standard error is
    std/sqrt(n) with ddof=1 (zero for single-seed cells).
    """
    if x_axis not in X_AXES:
        raise ValueError(f"x_axis must be one of {X_AXES}")
    if group_by not in ("n_samples", "env", "loss"):
        raise ValueError("group_by must be n_samples, env, or loss")
    clean = table.without_failures()
    if len(clean) == 0:
        raise ValueError("no rows left after excluding failures")
    xs = getattr(clean, x_axis)
    groups = getattr(clean, group_by)
    series = {}
    for g in sorted(set(groups.tolist())):
        mask = groups == g
        points = []
        for x in sorted(set(xs[mask].tolist())):
            cell = clean.episode_cost[mask & (xs == x)]
            se = float(cell.std(ddof=1) / np.sqrt(cell.shape[0])) if cell.shape[0] > 1 else 0.0
            points.append((float(x), float(cell.mean()), se))
        arr = np.array(points)
        series[g] = (arr[:, 0], arr[:, 1], arr[:, 2])
    return series


def plot_sweep(csv_path, x_axis: str = "gamma", group_by: str = "n_samples", out_path=None):
    """Render the sweep figure; returns the plotted series for inspection.

    The output format follows the out_path extension (png/pdf/svg).
    """
    table = load_sweep_csv(csv_path)
    series = sweep_series(table, x_axis, group_by)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    labels = {"gamma": "step size", "param": "loss parameter"}
    for g, (x, mean, se) in series.items():
        line = ax.plot(x, mean, marker="o", label=f"{group_by} = {g}")[0]
        band = se > 0
        if band.any():
            ax.fill_between(x, mean - se, mean + se, alpha=0.25, color=line.get_color())
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(labels[x_axis])
    ax.set_ylabel("episode cost")
    ax.legend()
    title = "episode cost vs " + labels[x_axis]
    if table.n_failed:
        title += f"  ({table.n_failed} failed episodes excluded)"
    ax.set_title(title)
    fig.tight_layout()
    if out_path is not None:
        fig.savefig(out_path)
    plt.close(fig)
    return series
