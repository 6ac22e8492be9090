"""Report figures written next to the CSV/JSON outputs.

Figures are a convenience only; every plotted number is also in a data
file. Rendering uses the non-interactive Agg backend and writes PNGs whose
metadata carries the config hash instead of a timestamp.
"""
from __future__ import annotations

import io

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .labels import LABELS, DiagnosisLabel  # noqa: E402


def _png(fig, config_hash: str = "") -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, bbox_inches="tight",
                metadata={"Software": "metadiag", "Comment": f"config_hash={config_hash}"})
    plt.close(fig)
    return buf.getvalue()


def accuracy_curve_png(curve, title: str = "", config_hash: str = "") -> bytes:
    """Train and test accuracy against the share of variance removed."""
    x = [c.variance_removed for c in curve]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(x, [c.train_acc for c in curve], "o-", label="train")
    ax.plot(x, [c.test_acc for c in curve], "s--", label="test")
    for c in curve:
        ax.annotate(str(c.n_drop), (c.variance_removed, c.test_acc), fontsize=7,
                    xytext=(2, -9), textcoords="offset points")
    ax.set_xlabel("variance removed")
    ax.set_ylabel("accuracy")
    ax.set_title(title, fontsize=9)
    ax.legend(fontsize=8)
    ax.grid(alpha=.3)
    return _png(fig, config_hash)


def confusion_png(cm, title: str = "", config_hash: str = "") -> bytes:
    cm = np.asarray(cm)
    short = [DiagnosisLabel(l).short for l in LABELS]
    fig, ax = plt.subplots(figsize=(3.6, 3.2))
    ax.imshow(cm, cmap="Blues")
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(int(cm[i, j])), ha="center", va="center",
                    color="white" if cm[i, j] > cm.max() / 2 else "black", fontsize=9)
    ax.set_xticks(range(len(short)), short)
    ax.set_yticks(range(len(short)), short)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title, fontsize=9)
    return _png(fig, config_hash)


def ablation_png(frame, config_hash: str = "") -> bytes:
    """Mean accuracy and per-class recall against the number of muted features."""
    g = frame.groupby("n_removed").mean(numeric_only=True)
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(g.index, g["accuracy"], "k-o", label="accuracy", lw=2)
    for l in LABELS:
        ax.plot(g.index, g[f"recall_{l}"], "--", label=f"recall {DiagnosisLabel(l).short}")
    ax.axhline(1 / 3, color="grey", lw=.8, ls=":")
    ax.set_xlabel("features removed")
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    ax.grid(alpha=.3)
    return _png(fig, config_hash)
