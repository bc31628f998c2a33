"""Static figures for reports (Agg backend, byte-stable PNGs)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> None:
    # drop the Software tag so output depends only on the data
    fig.savefig(path, dpi=90, metadata={"Software": None})
    plt.close(fig)


def line_plot(path, series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
              logy: bool = False, hlines: dict | None = None) -> None:
    """``series`` maps a label to ``(x, y)``."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    for label, (x, y) in series.items():
        ax.plot(np.asarray(x), np.asarray(y), lw=1.0, label=label)
    for label, y in (hlines or {}).items():
        ax.axhline(y, ls="--", lw=0.8, color="k", label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if series or hlines:
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def scatter_plot(path, series: dict, title: str = "", xlabel: str = "x0", ylabel: str = "x1",
                 size: float = 2.0) -> None:
    """``series`` maps a label to an ``(m, >=2)`` point array; the first two coordinates are drawn."""
    fig, ax = plt.subplots(figsize=(5, 4.5))
    for label, P in series.items():
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if len(P):
            ax.scatter(P[:, 0], P[:, 1], s=size, label=label)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if series:
        ax.legend(fontsize=7, markerscale=3)
    fig.tight_layout()
    _save(fig, path)
