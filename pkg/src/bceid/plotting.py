"""Optional PNG rendering of parameter sets and tolerance heatmaps.

The CSV files are the primary output; these figures are written next to
them when the CLI is given ``--figures``.
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .parametric import Family  # noqa: E402
from .sharp import IdentifiedSet  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "figure.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_parameter_set(result: IdentifiedSet, family: Family, path,
                       reference: Optional[IdentifiedSet] = None) -> Path:
    """Scatter of included grid points (2-D families) or a strip (1-D)."""
    th = result.thetas
    names = family.param_names
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 3.2))
        if th.shape[1] == 2:
            ax.scatter(th[:, 0], th[:, 1], s=4, c="0.85", label="grid")
            if reference is not None:
                r = reference.thetas[reference.mask]
                ax.scatter(r[:, 0], r[:, 1], s=22, facecolors="none", edgecolors="k",
                           label="population")
            m = th[result.mask]
            ax.scatter(m[:, 0], m[:, 1], s=8, c="C0", label="estimated")
            ax.set_ylabel(names[1])
        else:
            ax.plot(th[:, 0], np.zeros(len(th)), "|", c="0.75", label="grid")
            if reference is not None:
                ax.plot(reference.thetas[reference.mask, 0],
                        np.full(reference.mask.sum(), 0.5), "|", c="k", ms=12, label="population")
            ax.plot(th[result.mask, 0], np.full(result.mask.sum(), 1.0), "|", c="C0", ms=12,
                    label="estimated")
            ax.set_yticks([])
            ax.set_ylim(-0.5, 1.5)
        ax.set_xlabel(names[0])
        ax.legend(loc="best", frameon=False)
        return _save(fig, path)


def plot_heatmap(thetas: np.ndarray, values: np.ndarray, family: Family, path) -> Path:
    """Minimal tolerance per grid point; the zero level set is outlined."""
    names = family.param_names
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.4, 3.4))
        if thetas.shape[1] == 2:
            xs, ys = np.unique(thetas[:, 0]), np.unique(thetas[:, 1])
            Z = np.full((ys.size, xs.size), np.nan)
            Z[np.searchsorted(ys, thetas[:, 1]), np.searchsorted(xs, thetas[:, 0])] = values
            mesh = ax.pcolormesh(xs, ys, Z, shading="nearest", cmap="viridis")
            fig.colorbar(mesh, ax=ax, label="minimal tolerance")
            ax.set_ylabel(names[1])
        else:
            ax.plot(thetas[:, 0], values, "-o", ms=2)
            ax.set_ylabel("minimal tolerance")
        ax.set_xlabel(names[0])
        return _save(fig, path)
