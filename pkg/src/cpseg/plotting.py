"""Figures written next to the delimited outputs (PNG, non-interactive backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


def loss_curves(trace: list[dict], path, title: str | None = None) -> Path:
    """Total and per-signal loss against iteration, log scale."""
    it = np.array([r["iter"] for r in trace])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    ax1.plot(it, [r["total_loss"] for r in trace], lw=1)
    ax1.set(xlabel="iteration", ylabel="total loss", yscale="log", title=title or "total loss")
    skip = {"iter", "lr", "total_loss"}
    for name in (k for k in trace[0] if k not in skip):
        ax2.plot(it, [r[name] for r in trace], lw=0.8, label=name)
    ax2.set(xlabel="iteration", ylabel="WBCE", yscale="log", title="per-signal loss")
    ax2.legend(fontsize=7, ncol=2)
    return _save(fig, path)


def metric_boxplots(reports: dict, path) -> Path:
    """One panel per metric, one box per method; ``reports`` maps label -> MetricsReport."""
    from .metrics.report import METRICS

    fig, axes = plt.subplots(1, len(METRICS), figsize=(4 * len(METRICS), 3.6))
    labels = list(reports)
    for ax, m in zip(axes, METRICS):
        data = [[v for v in reports[k].column(m) if v is not None] for k in labels]
        ax.boxplot([d if d else [np.nan] for d in data])
        ax.set_xticks(range(1, len(labels) + 1), labels)
        ax.set_title(m)
    return _save(fig, path)


def error_map_slices(error_map: np.ndarray, gt: np.ndarray, path, vmax: float | None = None) -> Path:
    """Central slices along each axis: ground-truth outline with the surface error overlaid."""
    err = np.asarray(error_map, dtype=np.float64)
    vmax = vmax or (float(err.max()) if err.max() > 0 else 1.0)
    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    for axis, ax in enumerate(axes):
        idx = err.shape[axis] // 2
        e = np.take(err, idx, axis=axis)
        g = np.take(gt, idx, axis=axis)
        ax.imshow(g.T, cmap="gray", origin="lower", alpha=0.4)
        shown = np.ma.masked_where(e.T <= 0, e.T)
        im = ax.imshow(shown, cmap="jet", origin="lower", vmin=0, vmax=vmax)
        ax.set_title(f"axis {axis}, slice {idx}")
        ax.axis("off")
    fig.colorbar(im, ax=list(axes), shrink=0.8, label="distance to ground truth (mm)")
    return _save(fig, path)
