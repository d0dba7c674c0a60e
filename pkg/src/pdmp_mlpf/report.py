"""Figure rendering for the rate report.

The report path draws the cost-vs-MSE scatter per (method, model) with the
fitted regression lines, written as a PNG next to the delimited output. The
renderer strips volatile metadata so identical inputs yield identical bytes.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "pf": {"color": "#c44e52", "marker": "o", "label": "particle filter"},
    "mlpf": {"color": "#4c72b0", "marker": "s", "label": "multilevel particle filter"},
}


def render_rate_figure(aggregates, rates, path: str,
                       cost_basis: str = "euler") -> None:
    """Log-log cost against MSE, one panel per model, with fitted slopes."""
    key = f"cost_{cost_basis}"
    models = sorted({a["model"] for a in aggregates})
    fig, axes = plt.subplots(1, max(len(models), 1),
                             figsize=(6.0 * max(len(models), 1), 4.5),
                             squeeze=False, dpi=110)
    for ax, model in zip(axes[0], models):
        for method in ("pf", "mlpf"):
            pts = [(a[key], a["mse"]) for a in aggregates
                   if a["model"] == model and a["method"] == method
                   and a[key] > 0 and a["mse"] > 0]
            if not pts:
                continue
            style = _STYLE[method]
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            fit = next((r for r in rates if r["model"] == model
                        and r["method"] == method), None)
            label = style["label"]
            if fit is not None:
                label += f" (rate {fit['rate_cost_vs_mse']:.2f})"
            ax.loglog(xs, ys, linestyle="none", marker=style["marker"],
                      color=style["color"], label=label)
            if fit is not None and len(pts) >= 2:
                grid = [min(xs), max(xs)]
                line = [10.0 ** (fit["intercept"] + fit["slope_mse_vs_cost"]
                                 * math.log10(x)) for x in grid]
                ax.loglog(grid, line, linestyle="--", color=style["color"],
                          linewidth=1.0)
        ax.set_xlabel(f"cost ({cost_basis} operations)")
        ax.set_ylabel("MSE")
        ax.set_title(model)
        ax.legend(fontsize=8)
        ax.grid(True, which="both", alpha=0.25)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
