"""Figure rendering for the report paths.

Every report subcommand writes its delimited tables first; these helpers
turn those rows into PNG files next to them. Figures are presentation
artifacts only: nothing downstream reads them back.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def ablation_figure(rows, out_path) -> str:
    """NLL / classification error / Brier score against the independence threshold."""
    rows = sorted(rows, key=lambda r: r["threshold"])
    x = [r["threshold"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    for ax, key, label in zip(
        axes, ("nll", "error", "brier"), ("test NLL", "test error", "Brier score")
    ):
        ax.plot(x, [r[key] for r in rows], marker="o")
        ax.set_xlabel("independence threshold (nats)")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return str(out_path)


def structure_sweep_figure(rows, out_path) -> str:
    """Unique-structure count against training-set size, with seed spread."""
    rows = sorted(rows, key=lambda r: r["train_size"])
    x = [r["train_size"] for r in rows]
    y = [r["unique_structures"] for r in rows]
    err = [r.get("std", 0.0) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.errorbar(x, y, yerr=err, marker="o", capsize=3)
    ax.set_xscale("log")
    ax.set_xlabel("training set size")
    ax.set_ylabel("unique structures")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return str(out_path)


def ood_figure(doc, out_path) -> str:
    """Grouped bars of AUC-ROC and AUC-PR per score type and inference mode."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
    for ax, metric, label in zip(axes, ("auc_roc", "auc_pr"), ("AUC-ROC", "AUC-PR")):
        labels, values, colors = [], [], []
        for mode, color in (("stochastic", "C0"), ("simultaneous", "C1")):
            for name, metrics in sorted(doc.get(mode, {}).items()):
                labels.append(f"{name}\n({mode[:4]})")
                values.append(metrics[metric])
                colors.append(color)
        ax.bar(range(len(values)), values, color=colors)
        ax.set_xticks(range(len(values)))
        ax.set_xticklabels(labels, fontsize=7)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel(label)
        ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return str(out_path)


def reliability_figure(counts, confidence, accuracy, out_path) -> str:
    """Reliability diagram: per-bin accuracy against mean confidence."""
    bins = len(counts)
    centers = [(i + 0.5) / bins for i in range(bins)]
    fig, ax = plt.subplots(figsize=(4.2, 4))
    ax.plot([0, 1], [0, 1], "k--", alpha=0.5, label="perfect")
    occupied = [i for i, c in enumerate(counts) if c > 0]
    ax.bar(
        [centers[i] for i in occupied],
        [accuracy[i] for i in occupied],
        width=0.9 / bins,
        alpha=0.7,
        label="accuracy",
    )
    ax.plot(
        [centers[i] for i in occupied],
        [confidence[i] for i in occupied],
        "C1o-",
        label="confidence",
    )
    ax.set_xlabel("confidence")
    ax.set_ylabel("accuracy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return str(out_path)
