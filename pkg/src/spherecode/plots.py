"""Matplotlib figures rendered next to the delimited outputs.

Every report-producing CLI path calls one of these to drop a PNG beside
its CSV/NDJSON twin.  All functions take explicit data plus an output
path, use the Agg backend, and close their figure, so they are safe in
headless and repeated runs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_separation_trajectories(curves: dict[str, tuple], path) -> None:
    """Min pairwise distance per epoch; curves maps label -> (epochs, reports)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (epochs, reports) in curves.items():
        mins = [r.min_dist for r in reports]
        ax.plot(epochs, mins, marker="o", markersize=3, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("min pairwise cosine distance")
    ax.set_title("Centroid separation during training")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_separation_summary(report, path, title="Code vector separation") -> None:
    """Bar chart of min/mean/max pairwise distance for one vector set."""
    fig, ax = plt.subplots(figsize=(4.5, 4))
    names = ["min", "mean", "max"]
    vals = [report.min_dist, report.mean_dist, report.max_dist]
    ax.bar(names, vals, color=["#d62728", "#1f77b4", "#2ca02c"])
    for x, v in zip(names, vals):
        ax.text(x, v, f"{v:.3f}", ha="center", va="bottom", fontsize=9)
    ax.set_ylabel("pairwise cosine distance")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_training_metrics(records: list[dict], path) -> None:
    """Loss components and token accuracies against training step."""
    steps = [r["step"] for r in records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(steps, [r["loss"] for r in records], label="total")
    ax1.plot(steps, [r["l_c"] for r in records], label="token CE")
    ax1.plot(steps, [r["l_ar"] for r in records], label="angular")
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax1.grid(alpha=0.3)
    accs = np.asarray([r["token_acc"] for r in records])  # (steps, l)
    for j in range(accs.shape[1]):
        ax2.plot(steps, accs[:, j], label=f"token {j + 1}")
    ax2.set_xlabel("step")
    ax2.set_ylabel("token accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.legend()
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_cost_scaling(rows, path) -> None:
    """Stored classifier parameters vs identity count, log-log, per method."""
    by_method: dict[str, list] = {}
    for r in rows:
        # Collapse per-m tags like gif(l=4;v=10) into one series per family.
        family = r.method.split("(")[0]
        by_method.setdefault(family, []).append(r)
    fig, ax = plt.subplots(figsize=(6, 4))
    for family, rs in by_method.items():
        rs = sorted(rs, key=lambda r: r.m)
        ms = [r.m for r in rs]
        params = [r.params + r.head_params for r in rs]
        ax.plot(ms, params, marker="o", label=family)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("identities m")
    ax.set_ylabel("classifier parameters")
    ax.set_title("Output-layer size vs identity count")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
