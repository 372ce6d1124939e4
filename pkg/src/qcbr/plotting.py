"""Optional matplotlib figures for the command-line reports.

Every figure is drawn from data the CSV outputs already hold, so plots are
a convenience and never the record.  The non-interactive Agg backend is
selected on import.
"""
from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
    "legend.frameon": False,
}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_class_histogram(labels: Sequence[int], num_classes: int, path) -> None:
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=num_classes)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(np.arange(num_classes), counts, color="tab:blue")
        ax.set_xlabel("solution class")
        ax.set_ylabel("cases")
        ax.set_xticks(np.arange(num_classes))
        _save(fig, path)


def plot_learning_curve(proposed, final, path) -> None:
    """Windowed correctness against the case count, before and after revise.

    ``proposed`` and ``final`` are lists of ``(start, end, fraction)``.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for rows, label, marker in ((proposed, "proposed (before revise)", "o"),
                                    (final, "final (after revise)", "s")):
            if rows:
                ends = [r[1] for r in rows]
                ax.plot(ends, [r[2] for r in rows], marker=marker, label=label)
        ax.set_xlabel("cases seen")
        ax.set_ylabel("window correctness")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="lower right")
        _save(fig, path)


def plot_energy_traces(rows, ground: float, threshold: float, path) -> None:
    """Cold and warm eigensolver energy traces from ``WarmColdComparison.rows``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, r in enumerate(rows):
            ax.plot(np.arange(1, len(r.cold_trace) + 1), r.cold_trace, color="tab:red",
                    alpha=0.5, lw=0.8, label="cold" if i == 0 else None)
            ax.plot(np.arange(1, len(r.warm_trace) + 1), r.warm_trace, color="tab:green",
                    alpha=0.5, lw=0.8, label="warm" if i == 0 else None)
        ax.axhline(ground, color="k", ls="--", lw=0.8, label="ground energy")
        ax.axhline(threshold, color="gray", ls=":", lw=0.8, label="threshold")
        ax.set_xlabel("iteration")
        ax.set_ylabel("energy")
        ax.legend(loc="upper right")
        _save(fig, path)


def plot_accuracy(rows: Sequence[dict], path) -> None:
    """Mean cross-validated accuracy per method, with one standard deviation."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = [r["method"] for r in rows]
        means = [r["accuracy_mean"] for r in rows]
        stds = [r["accuracy_std"] for r in rows]
        ax.bar(np.arange(len(rows)), means, yerr=stds, capsize=3, color="tab:blue")
        ax.set_xticks(np.arange(len(rows)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel("accuracy")
        ax.set_ylim(0.0, 1.0)
        _save(fig, path)
