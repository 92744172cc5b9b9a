"""Figure rendering for experiment reports.

Every experiment writes delimited output first; these helpers render the
companion matplotlib figures next to it. All rendering is headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIG_DPI = 150

METHOD_COLORS = {
    "oracle": "#444444",
    "sft": "#9467bd",
    "mr": "#d62728",
    "mr-ensemble": "#ff7f0e",
    "hpl": "#1f77b4",
}


def _color(method: str) -> str:
    return METHOD_COLORS.get(method, "#2ca02c")


def render_gambling_scatter(rows: list[dict], path: str | Path) -> None:
    """Per-seed learned rewards at the start state, one dot per trial.

    Dots above the diagonal credit the safe action more than the risky one.
    """
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    for method in ("mr", "hpl"):
        pts = [(r["r_s1_a1"], r["r_s1_a2"]) for r in rows
               if r["method"] == method and r["status"] == "ok"]
        if not pts:
            continue
        xs, ys = zip(*pts)
        ax.scatter(xs, ys, s=14, alpha=0.65, label=method.upper(),
                   color=_color(method), edgecolors="none")
    lo, hi = ax.get_xlim()[0], ax.get_xlim()[1]
    lo = min(lo, ax.get_ylim()[0])
    hi = max(hi, ax.get_ylim()[1])
    ax.plot([lo, hi], [lo, hi], ls="--", lw=0.8, color="gray")
    ax.set_xlabel("reward(start, risky)")
    ax.set_ylabel("reward(start, safe)")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def render_method_returns(rows: list[dict], path: str | Path) -> None:
    """Mean evaluation return per method with per-seed dots."""
    methods = sorted({r["method"] for r in rows if r["status"] == "ok"})
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    for i, method in enumerate(methods):
        vals = [r["mean_return"] for r in rows
                if r["method"] == method and r["status"] == "ok"]
        jitter = np.linspace(-0.15, 0.15, len(vals))
        ax.scatter(i + jitter, vals, s=12, alpha=0.6, color=_color(method))
        ax.errorbar([i], [np.mean(vals)], yerr=[np.std(vals)], fmt="D",
                    color=_color(method), capsize=4, markersize=6)
    ax.set_xticks(range(len(methods)), [m.upper() for m in methods])
    ax.set_ylabel("evaluation return")
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def render_sweep_curve(rows: list[dict], axis: str, path: str | Path) -> None:
    """Metric vs swept value: mean line with a one-std band."""
    ok = [r for r in rows if r["status"] == "ok"]
    values = sorted({r["value"] for r in ok})
    means, stds = [], []
    for v in values:
        vals = [r["mean_return"] for r in ok if r["value"] == v]
        means.append(np.mean(vals))
        stds.append(np.std(vals))
    means, stds = np.asarray(means), np.asarray(stds)
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    ax.plot(values, means, marker="o", color="#1f77b4")
    ax.fill_between(values, means - stds, means + stds, alpha=0.2,
                    color="#1f77b4")
    ax.set_xlabel(axis)
    ax.set_ylabel("evaluation return")
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
