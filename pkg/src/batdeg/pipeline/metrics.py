"""Error metrics, ROC curves and the cumulated-MAE curve."""
from __future__ import annotations

from typing import Sequence

import numpy as np


def _pair(y, y_hat):
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if len(y) == 0:
        raise ValueError("empty input")
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {len(y)} targets, {len(y_hat)} predictions")
    return y, y_hat


def mape(y, y_hat, ids: Sequence[str] | None = None) -> float:
    """Mean absolute percentage error, in percent."""
    y, y_hat = _pair(y, y_hat)
    zero = np.flatnonzero(y == 0)
    if len(zero):
        who = [ids[i] for i in zero] if ids is not None else zero.tolist()
        raise ValueError(f"MAPE undefined for zero targets: {who}")
    return float(100.0 * np.mean(np.abs(y_hat - y) / np.abs(y)))


def mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(np.abs(y_hat - y)))


def rmse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.sqrt(np.mean((y_hat - y) ** 2)))


def regression_metrics(y, y_hat, ids=None) -> dict:
    return {"mape": mape(y, y_hat, ids), "mae": mae(y, y_hat), "rmse": rmse(y, y_hat)}


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) sweeping the threshold down through the unique scores.

    A sample is called positive when its score is >= the threshold. The
    curve starts at (0, 0) with threshold +inf and ends at (1, 1).
    """
    s = np.asarray(scores, dtype=float).ravel()
    lab = np.asarray(labels).ravel().astype(bool)
    if len(s) == 0 or len(s) != len(lab):
        raise ValueError("scores and labels must be non-empty and of equal length")
    n_pos = int(lab.sum())
    n_neg = len(lab) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative labels")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    lab_sorted = lab[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp = np.cumsum(lab_sorted)[ends]
    fp = (ends + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thr = np.r_[np.inf, s_sorted[ends]]
    return fpr, tpr, thr


def auc(fpr, tpr) -> float:
    """Trapezoidal area under a curve given by increasing ``fpr``."""
    fpr = np.asarray(fpr, dtype=float)
    tpr = np.asarray(tpr, dtype=float)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def roc_auc(scores, labels) -> float:
    fpr, tpr, _ = roc_curve(scores, labels)
    return auc(fpr, tpr)


def one_vs_rest(proba, labels, classes) -> dict:
    """Per-class ROC (class score vs rest) plus the macro average.

    Returns {class: {"fpr", "tpr", "auc"}, ..., "macro": {"fpr", "tpr", "auc"}}.
    Classes absent from ``labels`` (or covering all of them) are skipped. The
    macro curve averages per-class TPR on the union of their FPR points; its
    "auc" is the mean of the per-class AUCs.
    """
    proba = np.asarray(proba, dtype=float)
    labels = np.asarray(labels)
    out: dict = {}
    for j, c in enumerate(classes):
        pos = labels == c
        if pos.all() or not pos.any():
            continue
        fpr, tpr, _ = roc_curve(proba[:, j], pos)
        out[c] = {"fpr": fpr, "tpr": tpr, "auc": auc(fpr, tpr)}
    if out:
        grid = np.unique(np.concatenate([v["fpr"] for v in out.values()]))
        mean_tpr = np.mean([np.interp(grid, v["fpr"], v["tpr"]) for v in out.values()], axis=0)
        out["macro"] = {"fpr": grid, "tpr": mean_tpr,
                        "auc": float(np.mean([v["auc"] for v in out.values()]))}
    return out


def cumulated_mae_curve(order: Sequence[str], errors: dict) -> np.ndarray:
    """Running mean of |error| over cells taken in ``order``; point k averages the first k+1 cells."""
    e = np.abs(np.array([errors[c] for c in order], dtype=float))
    if len(e) == 0:
        return e
    return np.cumsum(e) / np.arange(1, len(e) + 1)


def total_variation(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(0.5 * np.abs(p / p.sum() - q / q.sum()).sum())


def accuracy(y, y_hat) -> float:
    y = np.asarray(y).ravel()
    y_hat = np.asarray(y_hat).ravel()
    if len(y) == 0 or y.shape != y_hat.shape:
        raise ValueError("accuracy needs non-empty inputs of equal length")
    return float(np.mean(y == y_hat))
