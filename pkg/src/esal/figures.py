"""Matplotlib renderings of reports, training logs, and attention maps.

Every function writes a PNG next to the machine-readable artifact it
mirrors; nothing here is load-bearing for scoring.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import GRANULARITIES, SCOPES, EvalReport


def save_report_chart(report: EvalReport, path) -> None:
    """Grouped P/R/F1 bars for every scope x granularity cell."""
    labels = [f"{s}/{g}" for s in SCOPES for g in GRANULARITIES]
    p = [report.cells[s][g].precision * 100 for s in SCOPES for g in GRANULARITIES]
    r = [report.cells[s][g].recall * 100 for s in SCOPES for g in GRANULARITIES]
    f = [report.cells[s][g].f1 * 100 for s in SCOPES for g in GRANULARITIES]
    x = np.arange(len(labels))
    width = 0.27

    fig, ax = plt.subplots(figsize=(9, 4))
    ax.bar(x - width, p, width, label="P")
    ax.bar(x, r, width, label="R")
    ax.bar(x + width, f, width, label="F1")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("percent")
    ax.set_ylim(0, 105)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_curves(log: list[dict], path) -> None:
    """Train loss and dev F1 curves from the epoch log records."""
    epochs = [rec["epoch"] for rec in log]
    loss = [rec["train_loss"] for rec in log]
    f1 = [rec["dev_f1_full"] for rec in log]

    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot(epochs, loss, color="tab:red", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(epochs, f1, color="tab:blue", label="dev Full F1")
    ax2.set_ylabel("dev Full F1", color="tab:blue")
    ax2.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_attention_png(
    weights: np.ndarray, row_labels: list[str], col_labels: list[str], path, title: str
) -> None:
    """Heatmap image of attention weights (rows = queries, cols = tokens)."""
    fig_w = max(4.0, 0.3 * len(col_labels))
    fig_h = max(2.0, 0.35 * len(row_labels) + 1.0)
    fig, ax = plt.subplots(figsize=(fig_w, fig_h))
    ax.imshow(weights, aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(col_labels)))
    ax.set_xticklabels(col_labels, rotation=90, fontsize=7)
    ax.set_yticks(range(len(row_labels)))
    ax.set_yticklabels(row_labels, fontsize=7)
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
