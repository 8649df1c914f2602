"""Relation-weight plotting utilities."""

from typing import Optional, Sequence

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

from .heatmap import HeatmapGrid
from .model import RelationReport
from .shared_config import HEATMAP_COLORMAP

PANEL_TITLES = {
    "rw_pre": "Preliminary relation weight",
    "dpe": "Position term",
    "rw": "Relation weight",
}


def plot_heatmap(ax, values: np.ndarray, title: str):
    """Draw one grid heatmap with symmetric colour limits and grey absent cells."""
    heatmap = HeatmapGrid.layout(values)
    cmap = matplotlib.colormaps[HEATMAP_COLORMAP].copy()
    cmap.set_bad("#808080")
    image = ax.imshow(
        np.ma.masked_invalid(heatmap.grid()),
        cmap=cmap,
        vmin=heatmap.vmin,
        vmax=heatmap.vmax,
        interpolation="nearest",
    )
    for index in range(heatmap.values.size):
        row, col = divmod(index, heatmap.cols)
        ax.text(col, row, str(index), ha="center", va="center", fontsize=6, color="black")
    ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])
    return image


def plot_relation_panel(
    report: RelationReport,
    nodes: np.ndarray,
    feature_names: Optional[Sequence[str]] = None,
    evidence_nodes: Sequence[int] = (),
):
    """Three heatmaps above the node feature curves of one sample."""
    fig = plt.figure(figsize=(11.0, 7.5))
    grid = fig.add_gridspec(2, 3, height_ratios=[1.0, 1.1])

    for col, kind in enumerate(("rw_pre", "dpe", "rw")):
        ax = fig.add_subplot(grid[0, col])
        image = plot_heatmap(ax, getattr(report, kind), PANEL_TITLES[kind])
        fig.colorbar(image, ax=ax, fraction=0.046, pad=0.04)

    ax_curves = fig.add_subplot(grid[1, :])
    t, m = nodes.shape
    names = feature_names or [f"x{i}" for i in range(m)]
    for j in range(m):
        ax_curves.plot(np.arange(t), nodes[:, j], lw=1, label=names[j])
    for k in evidence_nodes:
        ax_curves.axvline(k, color="black", ls=":", lw=0.8)
    ax_curves.axvline(t - 1, color="#FF0000", lw=0.8)
    ax_curves.set_xlabel("Time node")
    ax_curves.set_ylabel("Standardized value")
    ax_curves.margins(x=0)
    ax_curves.spines["top"].set_visible(False)
    ax_curves.spines["right"].set_visible(False)
    if m <= 12:
        ax_curves.legend(loc="upper left", ncol=min(m, 6), fontsize=7, frameon=False)

    fig.tight_layout()
    return fig
