"""SVG figures: ROC curves, per-dimension significance, validation AUC spread."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .stats import SIGNIFICANCE_NEG_LOG10  # noqa: E402

# stable element ids so identical inputs give identical files
matplotlib.rcParams["svg.hashsalt"] = "respvariant"


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def roc_svg(report: Mapping, path: str | Path) -> None:
    tasks = report["tasks"]
    fig, axes = plt.subplots(1, len(tasks), figsize=(4 * len(tasks), 4), squeeze=False)
    for ax, (task, rep) in zip(axes[0], tasks.items()):
        for mod, r in rep["modalities"].items():
            if r:
                ax.plot(r["fpr"], r["tpr"], lw=0.8, label=f"{mod} ({r['auc']:.2f})")
        if rep.get("fusion"):
            f = rep["fusion"]
            ax.plot(f["fpr"], f["tpr"], "k", lw=2, label=f"fusion ({f['auc']:.2f})")
        ax.plot([0, 1], [0, 1], ":", color="grey")
        ax.set_title(task)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.legend(fontsize=6, loc="lower right")
    fig.tight_layout()
    _save(fig, path)


def significance_svg(summary: Mapping, path: str | Path) -> None:
    mods = list(summary)
    fig, axes = plt.subplots(len(mods), 1, figsize=(8, 2.2 * len(mods)), squeeze=False)
    for ax, mod in zip(axes[:, 0], mods):
        for pair, d in summary[mod].items():
            ax.plot(d["neg_log10_p"], lw=0.8, label=f"{pair} (HMP {d['neg_log10_hmp']:.1f})")
        ax.axhline(SIGNIFICANCE_NEG_LOG10, color="grey", lw=1)
        ax.set_title(mod, fontsize=8)
        ax.set_ylabel("-log10 p")
        ax.legend(fontsize=5, ncol=3)
    axes[-1, 0].set_xlabel("feature dimension")
    fig.tight_layout()
    _save(fig, path)


def val_auc_boxplot(summary: Mapping, path: str | Path) -> None:
    tasks = list(summary)
    fig, axes = plt.subplots(1, len(tasks), figsize=(4 * len(tasks), 3.5), squeeze=False)
    for ax, task in zip(axes[0], tasks):
        mods = list(summary[task])
        data = [[v["best_val_auc"] for v in summary[task][m].values() if v["best_val_auc"] is not None] for m in mods]
        ax.boxplot(data)
        ax.set_xticks(range(1, len(mods) + 1), mods, rotation=60, fontsize=6)
        ax.set_title(task)
        ax.set_ylabel("validation AUC")
    fig.tight_layout()
    _save(fig, path)
