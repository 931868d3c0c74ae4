"""Seeded train/test studies: forest on the feature matrix, baselines on the
capacity-curve difference, and the report that collects them."""
from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..features.evaluate import FeatureMatrix
from ..forest import ForestConfig, fit
from .baselines import ridge_model, variance_model
from .metrics import accuracy, cumulated_mae_curve, one_vs_rest, regression_metrics

TASKS = ("life", "knee", "pattern")


@dataclass(frozen=True)
class TaskConfig:
    seeds: tuple = tuple(range(16))
    train_fraction: float = 0.6
    n_trees: int = 300
    max_features: object = None
    min_samples_leaf: int = 1
    max_depth: int | None = None
    baselines: bool = True
    ridge_alpha: float = 1.0
    top_features: int = 20

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")

    def forest(self, seed: int, task: str) -> ForestConfig:
        return ForestConfig(n_trees=self.n_trees, max_features=self.max_features,
                            min_samples_leaf=self.min_samples_leaf, max_depth=self.max_depth,
                            seed=seed, task="regression" if task == "life" else "classification")


def split_indices(n: int, seed: int, train_fraction: float = 0.6, strata=None) -> tuple[np.ndarray, np.ndarray]:
    """Shuffled train/test index split; with ``strata`` each class is split
    separately, keeping at least one member of every class with >= 2 members
    on both sides."""
    rng = np.random.default_rng(seed)
    if strata is None:
        perm = rng.permutation(n)
        k = min(n - 1, max(1, int(round(train_fraction * n))))
        return np.sort(perm[:k]), np.sort(perm[k:])
    strata = np.asarray(strata)
    train, test = [], []
    for c in np.unique(strata):
        members = rng.permutation(np.flatnonzero(strata == c))
        k = int(round(train_fraction * len(members)))
        if len(members) >= 2:
            k = min(len(members) - 1, max(1, k))
        train.extend(members[:k].tolist())
        test.extend(members[k:].tolist())
    return np.array(sorted(train), dtype=int), np.array(sorted(test), dtype=int)


@dataclass
class EvalReport:
    task: str
    cell_ids: list
    seeds: list
    per_seed: dict = field(default_factory=dict)     # method -> [{"seed", "train": {...}, "test": {...}}]
    cum_mae: dict = field(default_factory=dict)      # method -> averaged curve
    roc: dict = field(default_factory=dict)          # class name -> {"fpr", "tpr", "auc"} on pooled test scores
    importance_top: list = field(default_factory=list)   # [(rank, name, "0.041011")]
    excluded: dict = field(default_factory=dict)     # cell_id -> reason

    def summary(self) -> dict:
        out = {}
        for method, rows in self.per_seed.items():
            agg = {}
            for part in ("train", "test"):
                keys = sorted({k for r in rows for k in r[part]})
                agg[part] = {k: {"mean": float(np.mean([r[part][k] for r in rows])),
                                 "sd": float(np.std([r[part][k] for r in rows]))} for k in keys}
            out[method] = agg
        return out

    def test_metric(self, method: str, metric: str) -> np.ndarray:
        return np.array([r["test"][metric] for r in self.per_seed[method]])

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "n_cells": len(self.cell_ids),
            "cell_ids": self.cell_ids,
            "seeds": self.seeds,
            "per_seed": self.per_seed,
            "summary": self.summary(),
            "cum_mae": {m: [float(x) for x in c] for m, c in self.cum_mae.items()},
            "roc": {k: {"fpr": [float(x) for x in v["fpr"]], "tpr": [float(x) for x in v["tpr"]],
                        "auc": float(v["auc"])} for k, v in self.roc.items()},
            "importance_top": [list(r) for r in self.importance_top],
            "excluded": self.excluded,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        roc = {k: {"fpr": np.array(v["fpr"]), "tpr": np.array(v["tpr"]), "auc": v["auc"]}
               for k, v in obj.get("roc", {}).items()}
        return cls(obj["task"], obj["cell_ids"], obj["seeds"], obj["per_seed"],
                   {m: np.array(c) for m, c in obj.get("cum_mae", {}).items()}, roc,
                   [tuple(r) for r in obj.get("importance_top", [])], obj.get("excluded", {}))

    def write(self, directory) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = [d / "report.json"]
        with open(paths[0], "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
        if self.cum_mae:
            methods = sorted(self.cum_mae)
            p = d / "cum_mae.csv"
            with open(p, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["n_cells", *methods])
                n = max(len(self.cum_mae[m]) for m in methods)
                for k in range(n):
                    w.writerow([k + 1, *(repr(float(self.cum_mae[m][k])) if k < len(self.cum_mae[m]) else ""
                                         for m in methods)])
            paths.append(p)
        for name, curve in self.roc.items():
            p = d / f"roc_{name}.csv"
            with open(p, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["fpr", "tpr"])
                for x, y in zip(curve["fpr"], curve["tpr"]):
                    w.writerow([repr(float(x)), repr(float(y))])
            paths.append(p)
        if self.importance_top:
            p = d / "importance.csv"
            with open(p, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["rank", "feature", "importance"])
                w.writerows(self.importance_top)
            paths.append(p)
        return paths


def load_report(path) -> EvalReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    with open(path, encoding="utf-8") as fh:
        return EvalReport.from_json(json.load(fh))


def _class_name(task: str, c) -> str:
    if task == "knee":
        return "knee" if int(c) == 1 else "no_knee"
    return f"pattern{int(c)}"


def _seed_run(args):
    task, X, y, ids, seed, tr, te, cfg, dq = args
    model = fit(X[tr], y[tr], cfg.forest(seed, task))
    out = {"forest": {}}
    extra = {"importance": model.importances().scores}
    if task == "life":
        p_tr = model.predict(X[tr])
        p_te = model.predict(X[te])
        out["forest"] = {"train": regression_metrics(y[tr], p_tr, [ids[i] for i in tr]),
                         "test": regression_metrics(y[te], p_te, [ids[i] for i in te])}
        extra["errors"] = {"forest": {ids[i]: float(p - y[i]) for i, p in zip(te, p_te)}}
        if dq is not None:
            var = np.array([np.nanvar(v) if np.any(~np.isnan(v)) else np.nan for v in dq])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                vb = variance_model(var[tr], y[tr], var[te], y[te], [ids[i] for i in tr], [ids[i] for i in te])
            rb = ridge_model(dq[tr], y[tr], dq[te], y[te], cfg.ridge_alpha,
                             [ids[i] for i in tr], [ids[i] for i in te])
            for b in (vb, rb):
                out[b.name] = {"train": b.train_metrics, "test": b.test_metrics}
                truth = dict(zip(ids, y))
                extra["errors"][b.name] = {c: float(p - truth[c]) for c, p in zip(b.test_ids, b.test_pred)}
    else:
        proba_te = model.predict_proba(X[te])
        out["forest"] = {"train": {"accuracy": accuracy(y[tr], model.predict(X[tr]))},
                         "test": {"accuracy": accuracy(y[te], model.predict(X[te]))}}
        roc = one_vs_rest(proba_te, y[te], list(model.classes))
        if "macro" in roc:
            out["forest"]["test"]["auc_macro"] = roc["macro"]["auc"]
        for c in model.classes:
            if c in roc:
                out["forest"]["test"][f"auc_{_class_name(task, c)}"] = roc[c]["auc"]
        full = np.zeros((len(te), int(np.max(y)) + 1))
        full[:, model.classes.astype(int)] = proba_te
        extra["proba"] = (te, full)
    return seed, out, extra


def run_task(task: str, features: FeatureMatrix, labels: dict, cfg: TaskConfig = TaskConfig(),
             delta_q: dict | None = None, jobs: int = 1) -> EvalReport:
    """Fit and score the forest (and, for ``life``, the baselines) over ``cfg.seeds``.

    ``labels`` maps cell_id to a cycle life (``life``), 0/1 (``knee``) or a
    pattern number (``pattern``); cells labelled None are excluded. For the
    cumulated-MAE curve, each seed's test cells are taken in feature-matrix
    row order, the same ordering for every method.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    excluded = {}
    rows = []
    for i, cid in enumerate(features.cell_ids):
        lab = labels.get(cid)
        if lab is None:
            excluded[cid] = "no label (censored or too short)"
        else:
            rows.append(i)
    if len(rows) < 5:
        raise ValueError(f"need >= 5 usable cells, got {len(rows)}")
    ids = [features.cell_ids[i] for i in rows]
    X = features.values[rows]
    y = np.array([labels[c] for c in ids], dtype=float if task == "life" else np.int64)
    dq = None
    if task == "life" and cfg.baselines and delta_q is not None:
        missing = [c for c in ids if c not in delta_q]
        if missing:
            raise ValueError(f"missing capacity-difference curves for {missing}")
        dq = np.vstack([np.asarray(delta_q[c], dtype=float) for c in ids])

    jobs_args = []
    for seed in cfg.seeds:
        tr, te = split_indices(len(ids), seed, cfg.train_fraction, None if task == "life" else y)
        jobs_args.append((task, X, y, ids, seed, tr, te, cfg, dq))
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_seed_run, jobs_args))
    else:
        results = [_seed_run(a) for a in jobs_args]

    report = EvalReport(task, ids, list(cfg.seeds), excluded=excluded)
    importance = np.zeros(X.shape[1])
    curves: dict = {}
    pooled_idx, pooled_p = [], []
    for seed, out, extra in results:
        for method, m in out.items():
            report.per_seed.setdefault(method, []).append({"seed": seed, **m})
        importance += extra["importance"]
        for method, err in extra.get("errors", {}).items():
            order = [c for c in ids if c in err]
            curves.setdefault(method, []).append(cumulated_mae_curve(order, err))
        if "proba" in extra:
            pooled_idx.append(extra["proba"][0])
            pooled_p.append(extra["proba"][1])
    for method, cs in curves.items():
        n = min(len(c) for c in cs)
        report.cum_mae[method] = np.mean([c[:n] for c in cs], axis=0)
    if pooled_idx:
        idx = np.concatenate(pooled_idx)
        width = max(p.shape[1] for p in pooled_p)
        proba = np.vstack([np.pad(p, ((0, 0), (0, width - p.shape[1]))) for p in pooled_p])
        classes = sorted(set(y.tolist()))
        roc = one_vs_rest(proba[:, classes], y[idx], classes)
        report.roc = {("macro" if k == "macro" else _class_name(task, k)): v for k, v in roc.items()}
    importance /= len(results)
    s = importance.sum()
    if s > 0:
        importance /= s
    order = sorted(range(len(importance)), key=lambda i: (-importance[i], i))[:cfg.top_features]
    report.importance_top = [(r, features.names[i], f"{importance[i]:.6f}") for r, i in enumerate(order)]
    return report
