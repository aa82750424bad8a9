"""Report figures rendered next to the delimited text outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import CLASS_NAMES
from .metrics import ConfusionMatrix
from .tiler import ClassHistogram


def plot_loss_curve(history, path) -> None:
    steps = [r.step for r in history]
    losses = [r.loss for r in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_confusion_matrix(cm: ConfusionMatrix, path) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    total = max(cm.total, 1)
    im = ax.imshow(cm.m / total, cmap="viridis")
    ax.set_xticks(range(len(CLASS_NAMES)), CLASS_NAMES, rotation=45, ha="right")
    ax.set_yticks(range(len(CLASS_NAMES)), CLASS_NAMES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("ground truth")
    for g in range(len(CLASS_NAMES)):
        for p in range(len(CLASS_NAMES)):
            ax.text(p, g, str(int(cm.m[g, p])), ha="center", va="center",
                    color="white", fontsize=7)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_class_histogram(hist: ClassHistogram, weights, path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    x = np.arange(len(CLASS_NAMES))
    ax1.bar(x, hist.counts, color="tab:green")
    ax1.set_xticks(x, CLASS_NAMES, rotation=45, ha="right")
    ax1.set_ylabel("pixels")
    ax1.set_title("class distribution")
    ax2.bar(x, np.asarray(weights, dtype=float), color="tab:orange")
    ax2.set_xticks(x, CLASS_NAMES, rotation=45, ha="right")
    ax2.set_ylabel("weight")
    ax2.set_title("loss weights")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_iou(iou, miou: float, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(CLASS_NAMES))
    vals = np.nan_to_num(np.asarray(iou, dtype=float), nan=0.0)
    ax.bar(x, vals, color="tab:blue")
    ax.axhline(miou, color="tab:red", ls="--", label=f"mIoU {miou:.3f}")
    ax.set_xticks(x, CLASS_NAMES, rotation=45, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("IoU")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
