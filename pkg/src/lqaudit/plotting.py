"""Figures written next to the CLI's tabular outputs."""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_training_curves(history: Sequence[Mapping], path) -> None:
    """Loss, gradient norm and validation P/R/F1 per epoch."""
    epochs = [h["epoch"] for h in history]
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    ax = axes[0]
    ax.plot(epochs, [h["train_loss"] for h in history], label="train")
    ax.plot(epochs, [h["val_loss"] for h in history], label="validation")
    ax.set_title("weighted BCE")
    ax.set_xlabel("epoch")
    ax.legend()
    ax = axes[1]
    ax.plot(epochs, [h["grad_norm"] for h in history], color="tab:gray")
    ax.set_title("mean gradient norm")
    ax.set_xlabel("epoch")
    ax.set_yscale("log")
    ax = axes[2]
    for key in ("precision", "recall", "f1", "macro_f1"):
        ax.plot(epochs, [h[key] for h in history], label=key)
    ax.set_ylim(0, 1.02)
    ax.set_title("validation detection")
    ax.set_xlabel("epoch")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_class_metrics(per_class: Mapping[str, Mapping], path, title: str = "") -> None:
    """Grouped bars of precision / recall / specificity / F1 per flaw code."""
    codes = list(per_class)
    keys = ("precision", "recall", "specificity", "f1")
    width = 0.8 / len(keys)
    fig, ax = plt.subplots(figsize=(max(5, 1.3 * len(codes) + 2), 3.8))
    for j, key in enumerate(keys):
        xs = [i + (j - 1.5) * width for i in range(len(codes))]
        ax.bar(xs, [per_class[c][key] for c in codes], width, label=key)
    ax.set_xticks(range(len(codes)))
    ax.set_xticklabels(codes)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8, ncol=4, loc="lower center")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
