"""Optional PNG figures for the report command (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Fixed metadata keeps repeated renders byte-identical.
_PNG_META = {"Software": None}


def plot_eps_sweep(rows: list[dict], path) -> Path:
    """Constrained utility against epsilon, with the unconstrained level."""
    xs = [r["epsilon"] for r in rows if r["utility"] is not None]
    ys = [r["utility"] for r in rows if r["utility"] is not None]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, ys, marker="o", label="constrained")
    if rows and rows[0].get("unconstrained_utility") is not None:
        ax.axhline(rows[0]["unconstrained_utility"], ls="--", c="grey", label="unconstrained")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("expected utility per capita")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def plot_rate_curves(rows: list[dict], path) -> Path:
    """Per-group rates of accept-above threshold rules against the threshold."""
    names = ("acceptance", "tpr", "fpr", "ppv", "for")
    fig, axes = plt.subplots(1, len(names), figsize=(3 * len(names), 3), sharex=True)
    groups = sorted({r["group"] for r in rows})
    for ax, name in zip(axes, names):
        for g in groups:
            pts = [(r["tau"], r[name]) for r in rows if r["group"] == g and r[name] is not None]
            if pts:
                ax.plot(*zip(*pts), label=g)
        ax.set_title(name)
        ax.set_xlabel("threshold")
    axes[0].legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)
