"""Report figures rendered next to the delimited outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_generation_figure(report: dict, path: Path, title: str = "generated samples") -> None:
    """Grouped bar chart of produced sample counts per task/kind."""
    labels = []
    train_counts = []
    test_counts = []
    counts = report.get("counts", {})
    for task in sorted(counts):
        section = counts[task]
        if isinstance(section, int):
            labels.append(task)
            train_counts.append(section)
            test_counts.append(0)
            continue
        for kind in sorted(section):
            labels.append(f"{task}\n{kind}")
            train_counts.append(section[kind].get("train", 0))
            test_counts.append(section[kind].get("test", 0))
    if not labels:
        return
    x = range(len(labels))
    fig, ax = plt.subplots(figsize=(max(6, len(labels) * 1.1), 4.2))
    width = 0.4
    ax.bar([i - width / 2 for i in x], train_counts, width, label="train")
    if any(test_counts):
        ax.bar([i + width / 2 for i in x], test_counts, width, label="test")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("samples")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_score_figure(report: dict, path: Path, title: str = "evaluation") -> None:
    """Two panels: accuracy-like scores in [0,1] and error-style magnitudes."""
    acc_items = []
    err_items = []
    for task, section in sorted(report.get("per_task", {}).items()):
        if "acc" in section:
            acc_items.append((task, section["acc"]))
        elif "ciou" in section:
            acc_items.append((task, section["ciou"]))
        elif "f1" in section:
            acc_items.append((task, section["f1"]))
        if "mae" in section:
            err_items.append((task, section["mae"]))
    n_panels = (1 if acc_items else 0) + (1 if err_items else 0)
    if n_panels == 0:
        return
    fig, axes = plt.subplots(1, n_panels, figsize=(5.5 * n_panels, 4.0))
    if n_panels == 1:
        axes = [axes]
    panel = 0
    if acc_items:
        ax = axes[panel]
        panel += 1
        names, values = zip(*acc_items)
        ax.bar(names, values, color="#4c72b0")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("score")
        ax.set_title(f"{title}: accuracy-style metrics")
        ax.tick_params(axis="x", labelrotation=30, labelsize=8)
    if err_items:
        ax = axes[panel]
        names, values = zip(*err_items)
        ax.bar(names, values, color="#c44e52")
        ax.set_ylabel("mean absolute error")
        ax.set_title(f"{title}: error metrics")
        ax.tick_params(axis="x", labelrotation=30, labelsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
