"""Figures written next to the CSV/JSONL outputs. Always renders off-screen."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def accuracy_curve(accuracies: Sequence[float], path, label: str = "global model") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    rounds = np.arange(1, len(accuracies) + 1)
    ax.plot(rounds, accuracies, marker="o", ms=3, lw=1.2, label=label)
    ax.set_xlabel("round")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right", frameon=False)
    return _save(fig, path)


def sphere_scatter(points: np.ndarray, labels: np.ndarray, path) -> Path:
    """Unit-sphere feature cloud, one colour per class."""
    fig = plt.figure(figsize=(4.5, 4.5))
    ax = fig.add_subplot(projection="3d")
    u, v = np.mgrid[0:2 * np.pi:30j, 0:np.pi:15j]
    ax.plot_wireframe(np.cos(u) * np.sin(v), np.sin(u) * np.sin(v), np.cos(v), color="0.85", lw=0.4)
    for c in np.unique(labels):
        p = points[labels == c]
        ax.scatter(p[:, 0], p[:, 1], p[:, 2], s=4, label=f"class {c}")
    ax.set_box_aspect((1, 1, 1))
    ax.legend(loc="upper left", fontsize=7, frameon=False)
    return _save(fig, path)


def partition_heatmap(histogram: np.ndarray, path) -> Path:
    """clients × classes sample counts."""
    fig, ax = plt.subplots(figsize=(1 + 0.5 * histogram.shape[1], 1 + 0.35 * histogram.shape[0]))
    im = ax.imshow(histogram, cmap="viridis", aspect="auto")
    ax.set_xlabel("class")
    ax.set_ylabel("client")
    ax.set_xticks(range(histogram.shape[1]))
    ax.set_yticks(range(histogram.shape[0]))
    fig.colorbar(im, ax=ax, label="samples")
    return _save(fig, path)
