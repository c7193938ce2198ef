"""Figure rendering for the report paths (written alongside delimited output)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_training_curves(records, path: str) -> None:
    """Loss and mean column support over iterations, two stacked panels."""
    its = [r.iteration for r in records]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    ax1.plot(its, [r.loss for r in records], lw=1.0, color="tab:blue")
    ax1.set_ylabel("loss")
    ax1.grid(alpha=0.3)
    ax2.plot(its, [r.mean_l0 for r in records], lw=1.0, color="tab:orange")
    ax2.set_ylabel("mean column support")
    ax2.set_xlabel("iteration")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_speedup_chart(report, path: str) -> None:
    """Per-layer speedup bars plus the overall figure as a reference line."""
    names = [r.name for r in report.rows]
    ups = [r.speedup for r in report.rows]
    fig, ax = plt.subplots(figsize=(max(4, 0.7 * len(names) + 2), 3.5))
    ax.bar(range(len(names)), ups, color="tab:green")
    ax.axhline(report.overall_speedup, color="tab:red", ls="--", lw=1,
               label=f"overall {report.overall_speedup:.2f}x")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel("speedup (dense flops / lookup flops)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_fewshot_chart(rows, path: str) -> None:
    """Mean/stddev query accuracy per shot count; rows are (shots, accuracies)."""
    shots = [s for s, _ in rows]
    means = [sum(a) / len(a) for _, a in rows]
    stds = [(sum((x - m) ** 2 for x in a) / len(a)) ** 0.5 for (_, a), m in zip(rows, means)]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.errorbar(shots, means, yerr=stds, marker="o", capsize=4)
    ax.set_xlabel("examples per novel class")
    ax.set_ylabel("query accuracy")
    ax.set_xticks(shots)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
