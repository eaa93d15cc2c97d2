"""Render the loss-curve and sweep figures next to their CSVs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

LOSS_SERIES = (
    ("total", "tab:green", "total"),
    ("nll", "tab:red", "NLL"),
    ("rewe_raw", "tab:blue", "regression (raw)"),
    ("rewe_scaled", "tab:purple", "regression (scaled)"),
)


def plot_loss_curves(records, path) -> None:
    """Four loss series against sentences seen, one point per interval."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    xs = [r.sentences for r in records]
    for attr, color, label in LOSS_SERIES:
        ax.plot(xs, [getattr(r, attr) for r in records], color=color,
                label=label, linewidth=1.4)
    ax.set_xlabel("training sentences")
    ax.set_ylabel("interval mean loss")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sweep_curve(mean_rows, path) -> None:
    """Mean validation BLEU against lambda, one line per loss kind."""
    by_kind: dict[str, list[tuple[float, float]]] = {}
    for lam, kind, mean, n in mean_rows:
        if n > 0:
            by_kind.setdefault(kind, []).append((lam, mean))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for kind, pts in sorted(by_kind.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                label=kind, linewidth=1.4)
    ax.set_xscale("symlog", linthresh=0.1)
    ax.set_xlabel("trade-off coefficient")
    ax.set_ylabel("mean validation BLEU")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
