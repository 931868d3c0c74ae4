"""Random forest for regression and classification.

Every tree sees a bootstrap sample (kept as per-row counts, i.e. weights) and
draws a fresh random feature subset at each node. Columns are sorted once
per fit; a node's split search is then a weighted cumulative sum over the
presorted order, with non-member rows carrying zero weight.

Split candidates are midpoints between consecutive distinct values present in
the node. Among equally good splits the lowest feature index wins, then the
lowest threshold. Regression minimises the weighted squared error, and
classification the weighted Gini impurity.

NaN inputs are replaced by a per-column sentinel below the column's fitted
minimum, so a split can isolate them.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from numba import njit


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 300
    max_features: object = None     # "sqrt" | "third" | "all" | int | float; None = task default
    min_samples_leaf: int = 1
    max_depth: int | None = None
    bootstrap: bool = True
    seed: int = 0
    task: str = "regression"

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        mf = self.max_features
        if isinstance(mf, str) and mf not in ("sqrt", "third", "all"):
            raise ValueError(f"unknown max_features rule {mf!r}")

    def n_split_features(self, p: int) -> int:
        mf = self.max_features
        if mf is None:
            mf = "sqrt" if self.task == "classification" else "third"
        if mf == "sqrt":
            m = int(math.sqrt(p))
        elif mf == "third":
            m = p // 3
        elif mf == "all":
            m = p
        elif isinstance(mf, float):
            m = int(mf * p)
        else:
            m = int(mf)
        return min(p, max(1, m))


@dataclass
class DecisionTree:
    feature: np.ndarray     # -1 marks a leaf
    threshold: np.ndarray   # go left when x <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray       # (nodes,) regression means or (nodes, classes) frequencies
    n_samples: np.ndarray   # bootstrap-weighted sample count per node
    decrease: np.ndarray    # weighted impurity decrease per split node (0 at leaves)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            n = node[r]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def to_json(self) -> dict:
        return {k: v.tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, obj: dict) -> "DecisionTree":
        return cls(
            np.array(obj["feature"], dtype=np.int64),
            np.array(obj["threshold"], dtype=float),
            np.array(obj["left"], dtype=np.int64),
            np.array(obj["right"], dtype=np.int64),
            np.array(obj["value"], dtype=float),
            np.array(obj["n_samples"], dtype=float),
            np.array(obj["decrease"], dtype=float),
        )


@dataclass
class ImportanceReport:
    names: list
    scores: np.ndarray

    def ranked(self, top: int | None = None) -> list[tuple[str, float]]:
        order = sorted(range(len(self.names)), key=lambda i: (-self.scores[i], i))
        if top is not None:
            order = order[:top]
        return [(self.names[i], float(self.scores[i])) for i in order]

    def rows(self, top: int | None = None) -> list[tuple[int, str, str]]:
        """(rank, name, score with six decimals), the rank starting at 0."""
        return [(i, n, f"{s:.6f}") for i, (n, s) in enumerate(self.ranked(top))]

    def write_csv(self, path, top: int | None = None) -> None:
        import csv
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "feature", "importance"])
            w.writerows(self.rows(top))


@dataclass
class RandomForest:
    config: ForestConfig
    trees: list
    sentinels: np.ndarray
    n_features: int
    classes: np.ndarray | None = None
    feature_names: list | None = None

    def _prepare(self, X) -> np.ndarray:
        X = np.asarray(getattr(X, "values", X), dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} feature columns, got shape {X.shape}")
        return np.where(np.isnan(X), self.sentinels[None, :], X)

    def predict(self, X) -> np.ndarray:
        Xs = self._prepare(X)
        if self.config.task == "classification":
            proba = self._proba(Xs)
            return self.classes[np.argmax(proba, axis=1)]   # argmax keeps the lowest index on ties
        out = np.zeros(len(Xs))
        for t in self.trees:
            out += t.value[t.apply(Xs)]
        return out / len(self.trees)

    def _proba(self, Xs) -> np.ndarray:
        out = np.zeros((len(Xs), len(self.classes)))
        for t in self.trees:
            out += t.value[t.apply(Xs)]
        return out / len(self.trees)

    def predict_proba(self, X) -> np.ndarray:
        if self.config.task != "classification":
            raise ValueError("predict_proba needs a classification forest")
        return self._proba(self._prepare(X))

    def importances(self) -> ImportanceReport:
        total = np.zeros(self.n_features)
        for t in self.trees:
            split = t.feature >= 0
            np.add.at(total, t.feature[split], t.decrease[split])
        s = total.sum()
        scores = total / s if s > 0 else total
        names = self.feature_names or [str(i) for i in range(self.n_features)]
        return ImportanceReport(list(names), scores)

    def to_json(self) -> dict:
        return {
            "config": asdict(self.config),
            "n_features": self.n_features,
            "classes": None if self.classes is None else self.classes.tolist(),
            "feature_names": self.feature_names,
            "sentinels": self.sentinels.tolist(),
            "trees": [t.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RandomForest":
        classes = obj.get("classes")
        return cls(
            ForestConfig(**obj["config"]),
            [DecisionTree.from_json(t) for t in obj["trees"]],
            np.array(obj["sentinels"], dtype=float),
            int(obj["n_features"]),
            None if classes is None else np.array(classes),
            obj.get("feature_names"),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "RandomForest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def nan_sentinels(X: np.ndarray) -> np.ndarray:
    """Per-column value strictly below the observed minimum (-1 for all-NaN columns)."""
    with np.errstate(all="ignore"):
        finite = np.where(np.isfinite(X), X, np.nan)
        all_nan = np.all(np.isnan(finite), axis=0)
        lo = np.where(all_nan, 0.0, np.nanmin(np.where(all_nan[None, :], 0.0, finite), axis=0))
        hi = np.where(all_nan, 0.0, np.nanmax(np.where(all_nan[None, :], 0.0, finite), axis=0))
    return lo - np.maximum(1.0, hi - lo)


@njit(cache=True)
def _score(cw, cy, sy, tw, left, tot):
    rw = tw - cw
    n_cls = left.shape[0]
    if n_cls == 0:
        return cy * cy / cw + (sy - cy) * (sy - cy) / rw
    sl = 0.0
    sr = 0.0
    for c in range(n_cls):
        sl += left[c] * left[c]
        sr += (tot[c] - left[c]) * (tot[c] - left[c])
    return sl / cw + sr / rw


@njit(cache=True)
def _split_presorted(orderT, sortedT, features, w, y, onehot, msl):
    """Scan the presorted columns in ``features`` (ascending) for the best split.

    Rows outside the node carry zero weight. Regression when ``onehot`` has
    no columns, else Gini. The score is the quantity the best split
    maximises; a strict ``>`` keeps the lowest feature and then the lowest
    threshold on ties. Returns (score, feature, threshold), feature -1 when
    no valid split exists.
    """
    n = orderT.shape[1]
    n_cls = onehot.shape[1]
    tw = 0.0
    sy = 0.0
    tot = np.zeros(n_cls)
    for r in range(n):
        tw += w[r]
        sy += w[r] * y[r]
        for c in range(n_cls):
            tot[c] += w[r] * onehot[r, c]
    left = np.zeros(n_cls)
    best = -np.inf
    best_f = -1
    best_t = 0.0
    for f in features:
        cw = 0.0
        cy = 0.0
        for c in range(n_cls):
            left[c] = 0.0
        prev = 0.0
        for i in range(n):
            r = orderT[f, i]
            wi = w[r]
            if wi == 0.0:
                continue
            v = sortedT[f, i]
            if cw > 0.0 and v > prev and cw >= msl and tw - cw >= msl:
                score = _score(cw, cy, sy, tw, left, tot)
                if score > best:
                    best = score
                    best_f = f
                    t = 0.5 * (prev + v)
                    best_t = prev if t >= v else t
            cw += wi
            cy += wi * y[r]
            for c in range(n_cls):
                left[c] += wi * onehot[r, c]
            prev = v
    return best, best_f, best_t


@njit(cache=True)
def _split_members(XT, features, members, w, y, onehot, msl):
    """Same search as ``_split_presorted`` for small nodes: gathers the node's
    rows per feature and insertion-sorts them instead of scanning every row."""
    k = members.shape[0]
    n_cls = onehot.shape[1]
    tw = 0.0
    sy = 0.0
    tot = np.zeros(n_cls)
    for j in range(k):
        r = members[j]
        tw += w[r]
        sy += w[r] * y[r]
        for c in range(n_cls):
            tot[c] += w[r] * onehot[r, c]
    vals = np.empty(k)
    rows = np.empty(k, np.int64)
    left = np.zeros(n_cls)
    best = -np.inf
    best_f = -1
    best_t = 0.0
    for f in features:
        for j in range(k):
            r = members[j]
            v = XT[f, r]
            i = j
            while i > 0 and vals[i - 1] > v:
                vals[i] = vals[i - 1]
                rows[i] = rows[i - 1]
                i -= 1
            vals[i] = v
            rows[i] = r
        if vals[0] == vals[k - 1]:
            continue
        cw = 0.0
        cy = 0.0
        for c in range(n_cls):
            left[c] = 0.0
        for i in range(k - 1):
            r = rows[i]
            cw += w[r]
            cy += w[r] * y[r]
            for c in range(n_cls):
                left[c] += w[r] * onehot[r, c]
            v = vals[i]
            nv = vals[i + 1]
            if nv > v and cw >= msl and tw - cw >= msl:
                score = _score(cw, cy, sy, tw, left, tot)
                if score > best:
                    best = score
                    best_f = f
                    t = 0.5 * (v + nv)
                    best_t = v if t >= nv else t
    return best, best_f, best_t


@njit(cache=True)
def _draw_features(pool, start, m, u, mark):
    """Partial Fisher-Yates: move a uniform random subset of the not yet drawn
    part of ``pool`` into pool[start:start+m]; returns it in ascending order."""
    p = pool.shape[0]
    stop = min(p, start + m)
    for i in range(start, stop):
        j = i + int(u[i - start] * (p - i))
        if j >= p:
            j = p - 1
        tmp = pool[i]
        pool[i] = pool[j]
        pool[j] = tmp
        mark[pool[i]] = True
    out = np.empty(stop - start, np.int64)
    k = 0
    for f in range(p):
        if mark[f]:
            out[k] = f
            k += 1
            mark[f] = False
    return out


SMALL_NODE = 10   # nodes with at most this many distinct rows use the gather-and-sort search


class _Builder:
    def __init__(self, Xs, y, n_classes, cfg: ForestConfig):
        self.X = Xs
        self.XT = np.ascontiguousarray(Xs.T)
        order = np.argsort(Xs, axis=0, kind="stable")
        self.orderT = np.ascontiguousarray(order.T)
        self.sortedT = np.ascontiguousarray(np.take_along_axis(Xs, order, axis=0).T)
        self.classify = cfg.task == "classification"
        self.y = y.astype(float)
        self.onehot = np.eye(n_classes)[y] if self.classify else np.zeros((len(y), 0))
        self.cfg = cfg
        self.p = Xs.shape[1]
        self.mtry = cfg.n_split_features(self.p)
        self.mark = np.zeros(self.p, dtype=np.bool_)

    def _search(self, w, members, rng, pool):
        msl = float(self.cfg.min_samples_leaf)
        # a subset without any valid split falls through to further random subsets
        for start in range(0, self.p, self.mtry):
            u = rng.random(min(self.mtry, self.p - start))
            chunk = _draw_features(pool, start, self.mtry, u, self.mark)
            if len(members) <= SMALL_NODE:
                found = _split_members(self.XT, chunk, members, w, self.y, self.onehot, msl)
            else:
                found = _split_presorted(self.orderT, self.sortedT, chunk, w, self.y, self.onehot, msl)
            if found[1] >= 0:
                return found
        return None

    def build(self, weights: np.ndarray, rng: np.random.Generator) -> DecisionTree:
        feat, thr, left, right, value, nsamp, dec = [], [], [], [], [], [], []
        W_total = weights.sum()
        pool = np.arange(self.p, dtype=np.int64)
        stack = [(np.flatnonzero(weights > 0), 0, -1, False)]
        while stack:
            members, depth, parent, is_right = stack.pop()
            idx = len(feat)
            if parent >= 0:
                (right if is_right else left)[parent] = idx
            w = np.zeros(len(self.y))
            w[members] = weights[members]
            tw = w.sum()
            if self.classify:
                counts = w @ self.onehot
                val = counts / tw
                base = (counts * counts).sum() / tw
                pure = np.count_nonzero(counts) <= 1
            else:
                sy = w @ self.y
                val = sy / tw
                base = sy * sy / tw
                ym = self.y[members]
                pure = bool(np.all(ym == ym[0]))
            feat.append(-1)
            thr.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(val)
            nsamp.append(tw)
            dec.append(0.0)
            if pure or tw < 2 * self.cfg.min_samples_leaf or (
                    self.cfg.max_depth is not None and depth >= self.cfg.max_depth):
                continue
            found = self._search(w, members, rng, pool)
            if found is None:
                continue
            score, f, t = found
            feat[idx] = f
            thr[idx] = t
            dec[idx] = max(0.0, score - base) / W_total
            go_left = self.X[members, f] <= t
            # push right first so the left subtree gets the lower node ids
            stack.append((members[~go_left], depth + 1, idx, True))
            stack.append((members[go_left], depth + 1, idx, False))
        return DecisionTree(
            np.array(feat, dtype=np.int64), np.array(thr, dtype=float),
            np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
            np.array(value, dtype=float), np.array(nsamp, dtype=float), np.array(dec, dtype=float),
        )


def _tree_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def fit(X, y, cfg: ForestConfig = ForestConfig(), feature_names: Sequence[str] | None = None) -> RandomForest:
    """Fit a forest on rows of ``X`` (array or FeatureMatrix) against ``y``."""
    if feature_names is None and hasattr(X, "names"):
        feature_names = list(X.names)
    X = np.asarray(getattr(X, "values", X), dtype=float)
    y = np.asarray(y)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if len(X) < 2:
        raise ValueError("need at least 2 rows")
    if len(y) != len(X):
        raise ValueError(f"y has {len(y)} entries for {len(X)} rows")
    if feature_names is not None and len(feature_names) != X.shape[1]:
        raise ValueError("feature_names length does not match column count")
    classes = None
    if cfg.task == "classification":
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("classification targets must be integers")
        classes, y_idx = np.unique(y.astype(np.int64), return_inverse=True)
        y_fit = y_idx
        n_classes = len(classes)
    else:
        y_fit = y.astype(float)
        if not np.all(np.isfinite(y_fit)):
            raise ValueError("regression targets must be finite")
        n_classes = 0

    sentinels = nan_sentinels(X)
    Xs = np.where(np.isnan(X), sentinels[None, :], X)
    builder = _Builder(Xs, y_fit, n_classes, cfg)

    n = len(X)
    trees = []
    for rng in _tree_rngs(cfg.seed, cfg.n_trees):
        if cfg.bootstrap:
            weights = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
        else:
            weights = np.ones(n)
        trees.append(builder.build(weights, rng))
    return RandomForest(cfg, trees, sentinels, X.shape[1], classes,
                        None if feature_names is None else list(feature_names))
