"""Capacity-curve-difference baselines: the single-feature variance model and
ridge regression on the full difference vector, both on log10 cycle life."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..cell.records import CellHistory
from ..features.signals import GRID_LEN, resample_phase
from .metrics import regression_metrics


def delta_q_feature(history: CellHistory, i: int = 10, j: int = 50, grid_len: int = GRID_LEN) -> np.ndarray:
    """Q_j(V) - Q_i(V) of the discharge phase on a uniform grid over [v_min, v_max].

    Cycle indices are 1-based. Grid points where either curve is undefined are NaN.
    """
    n = len(history.cycles)
    for c in (i, j):
        if not 1 <= c <= n:
            raise ValueError(f"cell {history.cell_id}: cycle {c} missing ({n} cycles)")
    p = history.params
    curves = []
    for c in (i, j):
        ph = history.cycles[c - 1].discharge
        if ph is None or len(ph.t) < 2:
            raise ValueError(f"cell {history.cell_id}: cycle {c} has no discharge trace")
        curves.append(resample_phase(ph, "d", grid_len, p.v_min, p.v_max)["QV_d"])
    return curves[1] - curves[0]


def delta_q_variance(history: CellHistory, i: int = 10, j: int = 50, grid_len: int = GRID_LEN) -> float:
    dq = delta_q_feature(history, i, j, grid_len)
    dq = dq[~np.isnan(dq)]
    return float(np.var(dq)) if len(dq) else float("nan")


@dataclass
class BaselineResult:
    name: str
    coef: np.ndarray
    train_ids: list
    test_ids: list
    train_pred: np.ndarray
    test_pred: np.ndarray
    train_metrics: dict
    test_metrics: dict
    dropped: list

    def table_row(self) -> dict:
        """Train/test MAPE and RMSE, the columns of a model comparison table."""
        return {
            "model": self.name,
            "train_mape": self.train_metrics["mape"],
            "test_mape": self.test_metrics["mape"],
            "train_rmse": self.train_metrics["rmse"],
            "test_rmse": self.test_metrics["rmse"],
        }


def _ols(x, y):
    A = np.column_stack([np.ones(len(x)), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef


def variance_model(train_var, train_life, test_var, test_life, train_ids=None, test_ids=None,
                   name: str = "variance") -> BaselineResult:
    """OLS of log10(life) on log10(var); rows with non-positive or NaN variance
    are dropped with a warning."""
    train_ids = list(train_ids) if train_ids is not None else [str(k) for k in range(len(train_var))]
    test_ids = list(test_ids) if test_ids is not None else [str(k) for k in range(len(test_var))]

    def usable(var, ids):
        var = np.asarray(var, dtype=float)
        ok = np.isfinite(var) & (var > 0)
        bad = [ids[k] for k in np.flatnonzero(~ok)]
        if bad:
            warnings.warn(f"variance baseline: dropping cells with non-positive variance: {bad}",
                          stacklevel=3)
        return ok, bad

    ok_tr, bad_tr = usable(train_var, train_ids)
    ok_te, bad_te = usable(test_var, test_ids)
    if ok_tr.sum() < 3:
        raise ValueError("variance baseline needs >= 3 usable training cells")
    xtr = np.log10(np.asarray(train_var, dtype=float)[ok_tr])
    ytr = np.asarray(train_life, dtype=float)[ok_tr]
    coef = _ols(xtr, np.log10(ytr))
    pred_tr = 10 ** (coef[0] + coef[1] * xtr)
    xte = np.log10(np.asarray(test_var, dtype=float)[ok_te])
    yte = np.asarray(test_life, dtype=float)[ok_te]
    pred_te = 10 ** (coef[0] + coef[1] * xte)
    tr_ids = [c for c, k in zip(train_ids, ok_tr) if k]
    te_ids = [c for c, k in zip(test_ids, ok_te) if k]
    if not te_ids:
        raise ValueError("variance baseline: no usable test cells")
    return BaselineResult(name, coef, tr_ids, te_ids, pred_tr, pred_te,
                          regression_metrics(ytr, pred_tr, tr_ids), regression_metrics(yte, pred_te, te_ids),
                          bad_tr + bad_te)


def baseline_variance_model(train, test, i: int = 10, j: int = 50, train_life=None, test_life=None,
                            grid_len: int = GRID_LEN) -> BaselineResult:
    """Variance model over CellHistory lists; lives default to the cycle-life label."""
    from .labels import cycle_life

    def lives(cells, given):
        if given is not None:
            return np.asarray(given, dtype=float)
        out = []
        for h in cells:
            lab = cycle_life(h)
            if lab.censored:
                raise ValueError(f"cell {h.cell_id} is censored")
            out.append(lab.life)
        return np.asarray(out, dtype=float)

    return variance_model(
        [delta_q_variance(h, i, j, grid_len) for h in train], lives(train, train_life),
        [delta_q_variance(h, i, j, grid_len) for h in test], lives(test, test_life),
        [h.cell_id for h in train], [h.cell_id for h in test],
    )


def ridge_model(train_dq, train_life, test_dq, test_life, alpha: float = 1.0,
                train_ids=None, test_ids=None) -> BaselineResult:
    """Ridge regression of log10(life) on the full difference vector.

    NaN entries are replaced by the training column mean (0 if the column has
    no values); columns are standardised on the training rows.
    """
    Xtr = np.asarray(train_dq, dtype=float)
    Xte = np.asarray(test_dq, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mu = np.nanmean(Xtr, axis=0)
    mu = np.where(np.isnan(mu), 0.0, mu)
    Xtr = np.where(np.isnan(Xtr), mu, Xtr)
    Xte = np.where(np.isnan(Xte), mu, Xte)
    sd = Xtr.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Ztr = (Xtr - mu) / sd
    Zte = (Xte - mu) / sd
    ytr = np.log10(np.asarray(train_life, dtype=float))
    y0 = ytr.mean()
    w = np.linalg.solve(Ztr.T @ Ztr + alpha * np.eye(Ztr.shape[1]), Ztr.T @ (ytr - y0))
    pred_tr = 10 ** (y0 + Ztr @ w)
    pred_te = 10 ** (y0 + Zte @ w)
    life_tr = np.asarray(train_life, dtype=float)
    life_te = np.asarray(test_life, dtype=float)
    train_ids = list(train_ids) if train_ids is not None else [str(k) for k in range(len(life_tr))]
    test_ids = list(test_ids) if test_ids is not None else [str(k) for k in range(len(life_te))]
    return BaselineResult("ridge", np.r_[y0, w], train_ids, test_ids, pred_tr, pred_te,
                          regression_metrics(life_tr, pred_tr, train_ids),
                          regression_metrics(life_te, pred_te, test_ids), [])
