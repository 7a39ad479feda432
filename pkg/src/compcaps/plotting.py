"""PNG figures for evaluation reports (matplotlib, non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import auc, roc_points  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def confusion_heatmap(matrix, labels, path, title="Confusion matrix (% of true class)") -> Path:
    pct = matrix.row_percent()
    fig, ax = plt.subplots(figsize=(5.5, 4.8))
    im = ax.imshow(pct, cmap="Blues", vmin=0, vmax=100)
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right")
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    for i in range(pct.shape[0]):
        for j in range(pct.shape[1]):
            ax.text(j, i, f"{pct[i, j]:.0f}", ha="center", va="center",
                    color="white" if pct[i, j] > 60 else "black", fontsize=8)
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)


def roc_curves(scores, y_true, labels, path) -> Path:
    """One-vs-rest ROC per class; classes absent from ``y_true`` are skipped."""
    fig, ax = plt.subplots(figsize=(5, 5))
    y = np.asarray(y_true)
    for k, name in enumerate(labels):
        if not (np.any(y == k) and np.any(y != k)):
            continue
        pts = roc_points(scores, y, k)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=f"{name} (AUC {auc(pts):.3f})")
    ax.plot([0, 1], [0, 1], color="grey", lw=0.8, ls="--")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.legend(loc="lower right", fontsize=8)
    return _save(fig, path)


def training_curves(history, path) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for stage in ("dclstm", "capsnet"):
        rows = [h for h in history if h["stage"] == stage]
        if not rows:
            continue
        ep = [h["epoch"] for h in rows]
        ax1.plot(ep, [h["loss"] for h in rows], marker="o", ms=3, label=stage)
        ax2.plot(ep, [h["accuracy"] for h in rows], marker="o", ms=3, label=stage)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("training loss")
    ax1.set_yscale("log")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("training accuracy")
    ax2.set_ylim(0, 1.02)
    ax1.legend()
    return _save(fig, path)
