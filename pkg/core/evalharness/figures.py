from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from core.calibration.capture import UsageProfile  # noqa: E402

from .compare import EvalReport  # noqa: E402


def plot_usage_heatmap(profile: UsageProfile, path: str | Path) -> Path:
    """MoE layers on the y axis, experts on the x axis, colour = selection frequency."""
    layers = profile.layers()
    grid = np.vstack([profile.block(layer) for layer in layers]) if layers else np.zeros((0, 0))
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * grid.shape[1] + 2), max(2.5, 0.4 * len(layers) + 1.5)))
    im = ax.imshow(grid, aspect="auto", cmap="viridis")
    ax.set_xlabel("expert")
    ax.set_ylabel("MoE layer")
    ax.set_yticks(range(len(layers)), [str(layer) for layer in layers])
    ax.set_title("Expert usage frequency")
    fig.colorbar(im, ax=ax)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(p, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return p


def plot_pareto(report: EvalReport, path: str | Path) -> Path:
    """All strategies as points, the non-dominated ones joined as a step line."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    xs = [r.avg_bits for r in report.rows]
    ys = [r.perplexity for r in report.rows]
    errs = [r.perplexity_std or 0.0 for r in report.rows]
    ax.errorbar(xs, ys, yerr=errs, fmt="o", color="tab:blue", label="strategy", capsize=3)
    for r in report.rows:
        ax.annotate(r.strategy, (r.avg_bits, r.perplexity), fontsize=7, xytext=(3, 3), textcoords="offset points")
    front = report.pareto()
    if front:
        ax.step([p.avg_bits for p in front], [p.metric for p in front], where="post", color="tab:red", label="Pareto front")
    ax.set_xlabel("average bits")
    ax.set_ylabel("perplexity")
    ax.grid(True, alpha=0.3)
    ax.legend()
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(p, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return p
