"""Static figures for evaluation reports (PNG through the Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_cum_mae(report, path) -> Path:
    """Cumulated mean absolute error against the number of test cells, one line per method."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for method in sorted(report.cum_mae):
            curve = np.asarray(report.cum_mae[method])
            ax.plot(np.arange(1, len(curve) + 1), curve, marker="o", ms=3, label=method)
        ax.set_xlabel("test cells added")
        ax.set_ylabel("cumulated MAE (cycles)")
        ax.legend()
        return _save(fig, path)


def plot_roc(report, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name in sorted(report.roc):
            c = report.roc[name]
            style = {"lw": 2.0, "color": "k"} if name == "macro" else {"lw": 1.0}
            ax.plot(c["fpr"], c["tpr"], label=f"{name} (AUC {c['auc']:.3f})", **style)
        ax.plot([0, 1], [0, 1], ls=":", color="grey", lw=0.8)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.legend(fontsize=7, loc="lower right")
        return _save(fig, path)


def plot_importance(report, path, top: int = 10) -> Path:
    rows = report.importance_top[:top]
    with plt.rc_context({**STYLE, "figure.figsize": (7.0, 0.3 * max(len(rows), 3) + 1.0)}):
        fig, ax = plt.subplots()
        names = [r[1] for r in rows][::-1]
        scores = [float(r[2]) for r in rows][::-1]
        ax.barh(np.arange(len(rows)), scores, color="tab:blue")
        ax.set_yticks(np.arange(len(rows)))
        ax.set_yticklabels(names, fontsize=6)
        ax.set_xlabel("importance")
        ax.grid(axis="y", visible=False)
        return _save(fig, path)


def report_figures(report, directory) -> list[Path]:
    """Every figure that applies to the report, written into ``directory``."""
    d = Path(directory)
    out = []
    if report.cum_mae:
        out.append(plot_cum_mae(report, d / f"cum_mae_{report.task}.png"))
    if report.roc:
        out.append(plot_roc(report, d / f"roc_{report.task}.png"))
    if report.importance_top:
        out.append(plot_importance(report, d / f"importance_{report.task}.png"))
    return out
