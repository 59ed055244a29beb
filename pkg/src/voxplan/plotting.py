"""Figures written next to the CSV reports.

Uses the non-interactive Agg backend; every function saves one PNG and
closes its figure.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}
GIB = 1024.0**3


def _new(width: float = 5.0, height: float = 3.2):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    with plt.rc_context(RC):
        fig.savefig(path)
    plt.close(fig)
    return path


def plot_memory_sweep(
    axis: str,
    labels: Sequence[str],
    param_bytes: Sequence[int],
    activation_bytes: Sequence[int],
    grand_peak_bytes: Sequence[int],
    path: Union[str, Path],
    measured_bytes: Optional[Sequence[Optional[int]]] = None,
) -> Path:
    """Stacked bars of predicted peak memory per sweep point."""
    fig, ax = _new()
    xs = range(len(labels))
    resident = [g - a for g, a in zip(grand_peak_bytes, activation_bytes)]
    ax.bar(xs, [r / GIB for r in resident], label="params + grads + optimizer", color="#4c72b0")
    ax.bar(
        xs,
        [a / GIB for a in activation_bytes],
        bottom=[r / GIB for r in resident],
        label="activations + backward buffers",
        color="#dd8452",
    )
    if measured_bytes is not None:
        pts = [(x, m / GIB) for x, m in zip(xs, measured_bytes) if m is not None]
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], "k^", label="measured peak")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=30 if axis == "spatial" else 0)
    ax.set_xlabel({"batch": "batch size", "spatial": "input dims (DxHxW)", "filters": "base filters"}.get(axis, axis))
    ax.set_ylabel("peak training memory (GiB)")
    ax.legend(loc="upper left")
    return _save(fig, path)


def plot_thread_scaling(
    threads: Sequence[int], speedup: Sequence[float], images_per_second: Sequence[float], path: Union[str, Path]
) -> Path:
    fig, ax = _new()
    ax.plot(threads, speedup, "o-", label="measured speedup")
    ax.plot(threads, threads, ":", color="grey", label="linear")
    ax.set_xlabel("worker threads")
    ax.set_ylabel("speedup vs 1 thread")
    for t, s, ips in zip(threads, speedup, images_per_second):
        ax.annotate(f"{ips:.2f} img/s", (t, s), textcoords="offset points", xytext=(4, -10), fontsize=7)
    ax.legend(loc="upper left")
    return _save(fig, path)


def plot_training(records, path: Union[str, Path]) -> Path:
    with plt.rc_context(RC):
        fig, (ax_loss, ax_dice) = plt.subplots(1, 2, figsize=(8.0, 3.2))
    epochs = [r.epoch for r in records]
    ax_loss.plot(epochs, [r.train_loss for r in records], "o-")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_dice.plot(epochs, [r.train_dice for r in records], "o-", label="train dice")
    ax_dice.plot(epochs, [r.test_dice for r in records], "s-", label="test dice")
    ax_dice.set_ylim(0, 1.02)
    ax_dice.set_xlabel("epoch")
    ax_dice.set_ylabel("dice")
    ax_dice.legend(loc="lower right")
    return _save(fig, path)
