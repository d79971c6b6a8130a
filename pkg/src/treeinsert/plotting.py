"""Report figures, rendered headless to PNG."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import EvalReport, rine_steps, seq2seq_steps  # noqa: E402
from .tree import ParseTree  # noqa: E402


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def learning_curve(history: Sequence[dict], path: str | Path) -> Path:
    """Training loss (left axis) and held-out EM (right axis) per epoch."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    epochs = [r["epoch"] for r in history]
    ax.plot(epochs, [r["loss"] for r in history], color="tab:blue", marker=".")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss", color="tab:blue")
    ax.set_yscale("log")
    pts = [(r["epoch"], r["em"]) for r in history if r.get("em") is not None]
    if pts:
        ax2 = ax.twinx()
        ax2.plot(*zip(*pts), color="tab:red", marker="o", ms=3)
        ax2.set_ylabel("held-out EM", color="tab:red")
        ax2.set_ylim(0, 1.02)
    return _finish(fig, path)


def metrics_bar(report: EvalReport, path: str | Path) -> Path:
    names = ["exact_match", "em_flat", "em_composite", "span_precision", "span_recall", "span_f1", "validity_rate"]
    values = [getattr(report, k) for k in names]
    shown = [(n, v) for n, v in zip(names, values) if v is not None and v == v]
    fig, ax = plt.subplots(figsize=(6.5, 3.6))
    bars = ax.bar([n for n, _ in shown], [v for _, v in shown], color="tab:gray")
    for b, (_, v) in zip(bars, shown):
        ax.text(b.get_x() + b.get_width() / 2, v + 0.01, f"{v:.3f}", ha="center", fontsize=8)
    ax.set_ylim(0, 1.1)
    ax.set_title(f"n = {report.n}")
    ax.tick_params(axis="x", labelrotation=30, labelsize=8)
    return _finish(fig, path)


def step_histogram(golds: Sequence[ParseTree], path: str | Path) -> Path:
    """Per-tree decode steps: one per label plus EoP, against one per emitted element."""
    rine = [rine_steps(t) for t in golds]
    s2s = [seq2seq_steps(t) for t in golds]
    fig, ax = plt.subplots(figsize=(6, 3.6))
    hi = max(s2s) + 1
    ax.hist(rine, bins=range(0, hi + 1), alpha=0.7, label="insertion")
    ax.hist(s2s, bins=range(0, hi + 1), alpha=0.7, label="token by token")
    ax.set_xlabel("decode steps per tree")
    ax.set_ylabel("trees")
    ax.legend()
    return _finish(fig, path)
