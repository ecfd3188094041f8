"""Figure rendering for report outputs.

Every CLI report path writes PNG figures next to its delimited files:
layer heatmaps for estimation runs, error-versus-availability curves for
the experiment sweep, and the initialization-difference curve for the
sensitivity study.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib import colors

from .pipeline import CATEGORY_INSUFFICIENT, CATEGORY_LOW_SERVICE


def _cell_matrix(values: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.asarray(values, dtype=float).reshape(rows, cols)


def save_layer_maps(archive_layers: dict, rows: int, cols: int, path) -> None:
    """Four-panel map: estimated demand, availability, observed trips and
    the service-level categories."""
    cells = archive_layers["cells"]
    demand = np.array([np.nan if c["demand"] is None else c["demand"] for c in cells])
    avail = np.array([c["availability"] for c in cells])
    trips = np.array([c["trips"] for c in cells])
    cats = [c["category"] for c in cells]

    fig, axes = plt.subplots(2, 2, figsize=(11, 9))
    panels = [
        ("Estimated demand (arrivals/period)", demand, "viridis"),
        ("Availability fraction", avail, "cividis"),
        ("Observed trip rate", trips, "magma"),
    ]
    for ax, (title, vals, cmap) in zip(axes.ravel()[:3], panels):
        img = ax.imshow(_cell_matrix(vals, rows, cols), origin="lower", cmap=cmap)
        ax.set_title(title)
        fig.colorbar(img, ax=ax, shrink=0.85)

    cat_codes = np.array(
        [
            2 if c == CATEGORY_LOW_SERVICE else (0 if c == CATEGORY_INSUFFICIENT else 1)
            for c in cats
        ]
    )
    cmap = colors.ListedColormap(["#d9d9d9", "#74add1", "#d73027"])
    ax = axes.ravel()[3]
    ax.imshow(
        _cell_matrix(cat_codes, rows, cols), origin="lower", cmap=cmap,
        norm=colors.BoundaryNorm([-0.5, 0.5, 1.5, 2.5], 3),
    )
    ax.set_title("Service level (red = low service, gray = insufficient data)")
    for ax in axes.ravel():
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_layout_figure(layout, path) -> None:
    """Planted-demand map of the experiment grid."""
    fig, ax = plt.subplots(figsize=(6, 6))
    rates = _cell_matrix(layout.true_rate, layout.rows, layout.cols)
    img = ax.imshow(rates, origin="lower", cmap="YlGn")
    fig.colorbar(img, ax=ax, shrink=0.85, label="true arrivals/period")
    ax.set_title("Planted demand rates")
    ax.set_xticks(range(layout.cols))
    ax.set_yticks(range(layout.rows))
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


_ALG_STYLE = {
    "em": dict(color="tab:blue", label="EM"),
    "naive": dict(color="tab:red", label="Naive"),
    "realized": dict(color="gray", label="Realized rate"),
}


def save_error_curves(summary: pd.DataFrame, path) -> None:
    """Median and max error versus availability probability, one panel per
    cell category."""
    cats = ["cluster_center", "border", "isolated", "no_demand"]
    fig, axes = plt.subplots(2, 2, figsize=(11, 8), sharex=True)
    for ax, cat in zip(axes.ravel(), cats):
        sub = summary[summary.category == cat]
        for alg, style in _ALG_STYLE.items():
            rows = sub[sub.algorithm == alg].sort_values("p")
            ax.plot(rows["p"], rows["max_error"], marker="o", **style)
            ax.plot(
                rows["p"], rows["median_error"], marker="o", linestyle="--",
                color=style["color"], alpha=0.6,
            )
        ax.set_title(cat.replace("_", " "))
        ax.set_xlabel("availability probability p")
        ax.set_ylabel("abs error (solid max, dashed median)")
    axes.ravel()[0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_sensitivity_figure(table: pd.DataFrame, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.plot(table["gamma"], table["largest_diff"], marker="o", label="largest")
    ax.plot(table["gamma"], table["p99_diff"], marker="s", label="99th percentile")
    ax.plot(table["gamma"], table["median_diff"], marker="^", label="median")
    ax.set_xlabel("initialization blend weight")
    ax.set_ylabel("abs difference from trip-initialized estimate")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
