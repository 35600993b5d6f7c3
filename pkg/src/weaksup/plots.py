"""Optional figure rendering for CLI reports.

Matplotlib is imported lazily with the Agg backend so figure output works
headless and commands that render nothing never pay the import.
"""

from __future__ import annotations


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def consistency_figure(curve, path) -> None:
    """Log-log curve of average divergence against prefix size."""
    plt = _plt()
    sizes = [s for s, _ in curve]
    values = [v for _, v in curve]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.loglog(sizes, values, marker="o")
    ax.set_xlabel("points used")
    ax.set_ylabel("avg KL to true posterior")
    ax.set_title("best approximator vs sample size")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def decomposition_figure(bf_split, em_split, path) -> None:
    """Bar chart of the loss components of the two methods."""
    plt = _plt()
    labels = [
        "game total",
        "model",
        "game approx",
        "EM total",
        "EM plug-in",
        "EM estimation",
    ]
    values = [
        bf_split.total,
        bf_split.model,
        bf_split.approx,
        em_split.total,
        em_split.approx_plugin,
        em_split.approx_est,
    ]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(values)), values, color=["#346beb"] * 3 + ["#eb8034"] * 3)
    ax.set_xticks(range(len(values)), labels, rotation=20, ha="right")
    ax.set_ylabel("KL loss")
    ax.set_title("loss decomposition")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def pattern_figure(report, path) -> None:
    """Grouped bars: per-pattern class-1 probability before and after one EM round."""
    plt = _plt()
    t = range(len(report.patterns))
    width = 0.38
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.bar([x - width / 2 for x in t], report.best_table[:, 0], width, label="best approximator")
    ax.bar([x + width / 2 for x in t], report.em_table[:, 0], width, label="after one EM round")
    ax.set_xticks(list(t), [f"({a},{b})" for a, b in report.patterns])
    ax.set_xlabel("vote pattern")
    ax.set_ylabel("class-1 probability")
    ax.set_title(f"one EM round moves the prediction (max {report.displacement:.3f})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
