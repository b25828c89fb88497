"""Figure rendering for run artifacts.

Every CLI report path that writes delimited output also renders a matplotlib
figure next to it, so a run directory is self-describing.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .bench import BenchReport  # noqa: E402


def save_loss_curve(trace: list[float], path: str, title: str = "Training loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(len(trace)), trace, lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_history_curves(history: list[dict], path: str) -> None:
    """Train loss and validation metrics per fine-tuning epoch."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    epochs = [h["epoch"] for h in history]
    axes[0].plot(epochs, [h["train_loss"] for h in history], lw=1.2)
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("train loss")
    axes[0].grid(alpha=0.3)
    val_keys = [k for k in history[0] if k.startswith("val_")]
    for key in val_keys:
        axes[1].plot(epochs, [h[key] for h in history], lw=1.2, label=key[4:])
    axes[1].set_xlabel("epoch")
    axes[1].legend(fontsize=7)
    axes[1].grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bench_figure(report: BenchReport, path: str) -> None:
    """Log-log wall clock and score counts against total token count."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    variants = sorted({c.variant for c in report.cells})
    for variant in variants:
        cells = [c for c in report.cells if c.variant == variant]
        N = [c.channels * c.segments for c in cells]
        slope = report.slopes.get(variant)
        label = variant if slope is None else f"{variant} (slope {slope:.2f})"
        axes[0].loglog(N, [c.median_ns for c in cells], "o-", label=label)
        axes[1].loglog(N, [c.score_entries for c in cells], "o-", label=variant)
    axes[0].set_xlabel("tokens N = C*n")
    axes[0].set_ylabel("median wall clock (ns)")
    axes[1].set_xlabel("tokens N = C*n")
    axes[1].set_ylabel("score entries")
    for ax in axes:
        ax.grid(alpha=0.3, which="both")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
