"""Matplotlib renderings of logs, value surfaces, and rollouts.

Everything here writes PNG files next to the delimited outputs; nothing
opens a window (the Agg backend is forced on import).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dataio import MapRecord
from .evaluation import base_image
from .planner import REACHED, Trajectory


def read_log(tsv_path) -> dict:
    """Load a training log into named float arrays."""
    table = np.genfromtxt(tsv_path, delimiter="\t", names=True)
    table = np.atleast_1d(table)
    return {name: np.asarray(table[name], dtype=np.float64)
            for name in table.dtype.names}


def training_curves(tsv_path, out_path, title: str = "training") -> None:
    log = read_log(tsv_path)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(log["epoch"], log["loss"], color="tab:red", label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss", color="tab:red")
    ax.tick_params(axis="y", labelcolor="tab:red")
    ax2 = ax.twinx()
    ax2.plot(log["epoch"], log["acc"], color="tab:blue", label="accuracy")
    ax2.set_ylabel("train accuracy", color="tab:blue")
    ax2.set_ylim(0, 1.02)
    ax2.tick_params(axis="y", labelcolor="tab:blue")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def value_heatmap(scores: np.ndarray, record: MapRecord, out_path,
                  title: str = "estimated value") -> None:
    """Heatmap of max_a scores in raw units with obstacles blacked out."""
    v = scores.max(axis=0).astype(np.float64)
    masked = np.ma.masked_where(record.gmap.cells.astype(bool), v)
    fig, ax = plt.subplots(figsize=(5.5, 5))
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad(color="black")
    im = ax.imshow(masked, cmap=cmap, interpolation="nearest")
    gr, gc = record.gmap.goal
    ax.plot(gc, gr, marker="*", color="white", markersize=14,
            markeredgecolor="black")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def trajectory_figure(record: MapRecord, trajectories: list[Trajectory],
                      out_path, title: str = "rollouts") -> None:
    gray = base_image(record)
    fig, ax = plt.subplots(figsize=(5.5, 5))
    ax.imshow(gray, cmap="gray", vmin=0, vmax=255, interpolation="nearest")
    for traj in trajectories:
        rows = [c[0] for c in traj.cells]
        cols = [c[1] for c in traj.cells]
        color = "tab:green" if traj.outcome == REACHED else "tab:red"
        ax.plot(cols, rows, color=color, linewidth=1.6, alpha=0.85)
        ax.plot(cols[0], rows[0], marker="o", color="tab:blue", markersize=5)
    gr, gc = record.gmap.goal
    ax.plot(gc, gr, marker="*", color="gold", markersize=14,
            markeredgecolor="black")
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def metrics_bars(reports, out_path, title: str = "evaluation") -> None:
    """Grouped bars: set accuracy and rollout success rate per model."""
    reports = list(reports)
    names = [f"{r.arch}/s{r.seed}" for r in reports]
    x = np.arange(len(reports))
    width = 0.35
    fig, ax = plt.subplots(figsize=(1.6 + 1.3 * len(reports), 4.2))
    ax.bar(x - width / 2, [r.acc_test_set for r in reports], width,
           label="test set-accuracy", color="tab:blue")
    ax.bar(x + width / 2, [r.sr_test for r in reports], width,
           label="test success rate", color="tab:orange")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylim(0, 1.05)
    ax.axhline(1.0, color="gray", linewidth=0.6, linestyle=":")
    ax.legend(loc="lower right")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
