"""Optional SVG charts for threshold curves and score histograms (needs matplotlib)."""

from __future__ import annotations

import os
from typing import Sequence

from .curation import Histogram, ThresholdCurve


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("SVG output needs matplotlib; install with `pip install artifact[plot]`") from exc
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "speechcurate"
    import matplotlib.pyplot as plt

    return plt


def save_curves_svg(curves: Sequence[ThresholdCurve], path: str | os.PathLike) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for c in curves:
        ax.plot([t for t, _ in c.points], [h for _, h in c.points], marker=".", label=f"{c.source} {c.metric}")
    ax.set_xlabel("minimum score")
    ax.set_ylabel("hours")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def save_histograms_svg(hists: Sequence[Histogram], path: str | os.PathLike) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for h in hists:
        lo = h.edges[:-1]
        widths = [b - a for a, b in zip(h.edges, h.edges[1:])]
        ax.bar(lo, h.counts, width=widths, align="edge", alpha=0.5, label=h.source)
    ax.set_xlabel(hists[0].metric if hists else "score")
    ax.set_ylabel("clips")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
