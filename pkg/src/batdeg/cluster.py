"""Lloyd's K-means with k-means++ seeding, restarts, inertia curve and elbow helper."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class KMeansModel:
    k: int
    centroids: np.ndarray
    inertia: float
    assignments: np.ndarray
    seed: int
    n_iter: int
    inertia_history: list = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        return _assign(np.asarray(X, dtype=float), self.centroids)[0]

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "centroids": self.centroids.tolist(),
            "inertia": self.inertia,
            "assignments": self.assignments.tolist(),
            "seed": self.seed,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "KMeansModel":
        return cls(obj["k"], np.array(obj["centroids"], dtype=float), obj["inertia"],
                   np.array(obj["assignments"], dtype=int), obj["seed"], obj["n_iter"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)


def _sq_dist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)


def _assign(X, C):
    d = _sq_dist(X, C)
    labels = d.argmin(axis=1)  # lowest index wins ties
    return labels, d[np.arange(len(X)), labels]


def kmeans_plus_plus(X, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new center drawn with probability proportional
    to squared distance from the nearest existing center."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    centers = [X[rng.integers(n)]]
    closest = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers.append(X[idx])
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=float)


def _lloyd(X, centroids, max_iter, tol):
    history = []
    labels = None
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new_labels, dist = _assign(X, centroids)
        inertia = float(dist.sum())
        history.append(inertia)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        if len(history) > 1 and history[-2] - inertia <= tol * max(history[-2], 1e-300) and tol > 0:
            labels = new_labels
            break
        labels = new_labels
        centroids = centroids.copy()
        for j in range(len(centroids)):
            members = labels == j
            if members.any():
                centroids[j] = X[members].mean(axis=0)
            else:
                # empty cluster: move it onto the point worst served by the others
                far = int(dist.argmax())
                centroids[j] = X[far]
                dist[far] = 0.0
    labels, dist = _assign(X, centroids)
    return centroids, labels, float(dist.sum()), n_iter, history


def kmeans_fit(X, k: int, seed: int = 0, max_iter: int = 300, tol: float = 0.0,
               n_init: int = 1, init=None) -> KMeansModel:
    """Best-of-``n_init`` Lloyd runs; ``init`` fixes the starting centroids."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(X) < k:
        raise ValueError(f"need at least k={k} rows, got {len(X)}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init) if init is None else 1):
        start = kmeans_plus_plus(X, k, rng) if init is None else np.array(init, dtype=float)
        C, labels, inertia, n_iter, hist = _lloyd(X, start, max_iter, tol)
        if best is None or inertia < best.inertia:
            best = KMeansModel(k, C, inertia, labels, seed, n_iter, hist)
    return best


def inertia_curve(X, k_range, seed: int = 0, n_init: int = 10) -> list[tuple[int, float]]:
    """Minimum inertia over ``n_init`` restarts for each k.

    Besides the random restarts, each k also starts from the previous k's best
    centroids plus the worst-served point, which keeps the curve non-increasing.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    curve = []
    prev = None
    for k in k_range:
        if not 1 <= k <= len(X):
            raise ValueError(f"k={k} outside [1, {len(X)}]")
        best = kmeans_fit(X, k, seed=seed + k, n_init=n_init)
        if prev is not None and prev.k == k - 1:
            _, dist = _assign(X, prev.centroids)
            grown = np.vstack([prev.centroids, X[int(dist.argmax())]])
            alt = kmeans_fit(X, k, seed=seed + k, init=grown)
            if alt.inertia < best.inertia:
                best = alt
        curve.append((k, best.inertia))
        prev = best
    return curve


def elbow_pick(curve) -> int:
    """k at the largest second difference of the inertia curve (a suggestion)."""
    ks = [k for k, _ in curve]
    vals = np.array([v for _, v in curve], dtype=float)
    if len(vals) < 3:
        return ks[0]
    second = vals[:-2] - 2 * vals[1:-1] + vals[2:]
    return ks[int(np.argmax(second)) + 1]
