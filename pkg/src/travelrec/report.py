"""Report files: delimited text plus rendered figures next to each other."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .objective import MetricsReport
from .sequence import TASKS


def write_metrics(report: MetricsReport, path) -> str:
    text = str(report) + "\n"
    Path(path).write_text(text, encoding="utf-8")
    return text


def write_stats(stats: dict, path) -> str:
    lines = []
    for key, value in stats.items():
        if isinstance(value, dict):
            for sub, count in value.items():
                lines.append(f"{key}.{sub} = {count}")
        elif isinstance(value, float):
            lines.append(f"{key} = {value:.6f}")
        else:
            lines.append(f"{key} = {value}")
    text = "\n".join(lines) + "\n"
    Path(path).write_text(text, encoding="utf-8")
    return text


def render_dataset_stats(stats: dict, path) -> None:
    fig, axes = plt.subplots(2, 2, figsize=(11, 7))
    panels = [
        ("poi_count_by_category", "POIs per category", axes[0, 0]),
        ("poi_count_by_gid", "POIs per block (top 50)", axes[0, 1]),
        ("interaction_count_by_action", "Interactions per action type", axes[1, 0]),
        ("interaction_count_by_mode", "Interactions per travel mode", axes[1, 1]),
    ]
    for key, title, ax in panels:
        counts = stats.get(key, {})
        items = list(counts.items())[:50]
        ax.bar(range(len(items)), [c for _, c in items], color="#4878a8")
        ax.set_title(title)
        ax.set_ylabel("count")
        ax.tick_params(labelsize=7)
    fig.suptitle(
        f"{stats.get('users', 0)} users, {stats.get('pois', 0)} POIs, "
        f"{stats.get('interactions', 0)} interactions "
        f"(mean {stats.get('interactions_per_user_mean', 0):.1f}/user)"
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_loss_curves(rows: list, path) -> None:
    """rows: (step, total, per-task dict) tuples from the loss log."""
    fig, ax = plt.subplots(figsize=(8, 5))
    steps = [r[0] for r in rows]
    ax.plot(steps, [r[1] for r in rows], label="total", linewidth=2, color="black")
    for task in TASKS:
        series = [(r[0], r[2][task]) for r in rows if task in r[2]]
        if series:
            ax.plot([s for s, _ in series], [v for _, v in series], label=task, alpha=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("training loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_metrics_figure(report: MetricsReport, path) -> None:
    keys = sorted(report.values)
    values = [report.values[k] for k in keys]
    fig, ax = plt.subplots(figsize=(max(6, 0.8 * len(keys)), 4.5))
    ax.bar(range(len(keys)), values, color="#4878a8")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels(keys, rotation=45, ha="right", fontsize=8)
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom", fontsize=7)
    ax.set_title("evaluation metrics")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_depth_scaling(results: dict, path) -> None:
    """results: depth -> final training loss; one point per depth."""
    depths = sorted(results)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(depths, [results[d] for d in depths], marker="o")
    ax.set_xlabel("decoder depth")
    ax.set_ylabel("final training loss")
    ax.set_xticks(depths)
    ax.set_title("depth scaling")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
