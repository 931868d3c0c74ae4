"""Gaussian-emission hidden Markov model: Baum-Welch fitting, likelihood, sampling.

Model JSON layout (matrices row-major)::

    {"n_states": n, "transition": [[...], ...], "means": [...],
     "variances": [...], "initial": [...]}
"""
from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from ..cluster import kmeans_plus_plus

VARIANCE_FLOOR = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GaussianHmm:
    transition: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    initial: np.ndarray
    # fit diagnostics, not persisted
    loglik_history: list = field(default_factory=list, compare=False)
    variance_floor_applied: bool = field(default=False, compare=False)
    n_iter: int = field(default=0, compare=False)
    converged: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.transition = np.atleast_2d(np.asarray(self.transition, dtype=float))
        self.means = np.atleast_1d(np.asarray(self.means, dtype=float))
        self.variances = np.atleast_1d(np.asarray(self.variances, dtype=float))
        self.initial = np.atleast_1d(np.asarray(self.initial, dtype=float))
        self.validate()

    @property
    def n_states(self) -> int:
        return len(self.means)

    def validate(self) -> None:
        n = self.n_states
        if n < 1:
            raise ValueError("HMM needs at least one state")
        if self.transition.shape != (n, n) or self.variances.shape != (n,) or self.initial.shape != (n,):
            raise ValueError("inconsistent HMM parameter shapes")
        if np.any(self.transition < 0) or np.any(np.abs(self.transition.sum(axis=1) - 1) > 1e-9):
            raise ValueError("transition rows must be probability vectors")
        if np.any(self.initial < 0) or abs(self.initial.sum() - 1) > 1e-9:
            raise ValueError("initial distribution must sum to 1")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")

    def to_json(self) -> dict:
        return {
            "n_states": self.n_states,
            "transition": self.transition.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "initial": self.initial.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GaussianHmm":
        model = cls(obj["transition"], obj["means"], obj["variances"], obj["initial"])
        if model.n_states != obj.get("n_states", model.n_states):
            raise ValueError("n_states does not match parameter shapes")
        return model

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "GaussianHmm":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _log_emission(x: np.ndarray, means, variances) -> np.ndarray:
    d = x[:, None] - means[None, :]
    return -0.5 * (_LOG_2PI + np.log(variances)[None, :] + d * d / variances[None, :])


def _observations(trace) -> np.ndarray:
    x = getattr(trace, "power", trace)
    return np.asarray(x, dtype=float).ravel()


def loglik(model: GaussianHmm, trace) -> float:
    """Forward-algorithm log-likelihood, carried in log space."""
    x = _observations(trace)
    if len(x) == 0:
        return 0.0
    log_b = _log_emission(x, model.means, model.variances)
    A = model.transition
    with np.errstate(divide="ignore"):
        la = np.log(model.initial) + log_b[0]
    for t in range(1, len(x)):
        m = la.max()
        with np.errstate(divide="ignore"):
            la = np.log(np.exp(la - m) @ A) + m + log_b[t]
    m = la.max()
    return float(m + math.log(np.exp(la - m).sum()))


def _e_step(x, model):
    """Scaled forward-backward; returns loglik, state posteriors, expected transitions."""
    T, n = len(x), model.n_states
    log_b = _log_emission(x, model.means, model.variances)
    shift = log_b.max(axis=1)
    B = np.exp(log_b - shift[:, None])
    A = model.transition
    alpha = np.empty((T, n))
    c = np.empty(T)
    a = model.initial * B[0]
    c[0] = a.sum()
    alpha[0] = a / c[0]
    for t in range(1, T):
        a = (alpha[t - 1] @ A) * B[t]
        c[t] = a.sum()
        alpha[t] = a / c[t]
    beta = np.empty((T, n))
    beta[-1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = A @ (B[t + 1] * beta[t + 1]) / c[t + 1]
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    if T > 1:
        xi = A * (alpha[:-1].T @ (B[1:] * beta[1:] / c[1:, None]))
    else:
        xi = np.zeros((n, n))
    ll = float(np.log(c).sum() + shift.sum())
    return ll, gamma, xi


def _m_step(x, gamma, xi, old: GaussianHmm):
    n = old.n_states
    initial = gamma[0] / gamma[0].sum()
    rows = xi.sum(axis=1, keepdims=True)
    transition = np.where(rows > 0, xi / np.where(rows > 0, rows, 1.0), old.transition)
    transition /= transition.sum(axis=1, keepdims=True)
    weight = gamma.sum(axis=0)
    means = old.means.copy()
    variances = old.variances.copy()
    floored = False
    for j in range(n):
        if weight[j] <= 0:
            continue
        means[j] = gamma[:, j] @ x / weight[j]
        d = x - means[j]
        var = gamma[:, j] @ (d * d) / weight[j]
        if var < VARIANCE_FLOOR:
            var = VARIANCE_FLOOR
            floored = True
        variances[j] = var
    model = GaussianHmm(transition, means, variances, initial)
    return model, floored


def _initial_model(x, n_states, rng):
    means = np.sort(kmeans_plus_plus(x[:, None], n_states, rng)[:, 0])
    labels = np.abs(x[:, None] - means[None, :]).argmin(axis=1)
    floored = False
    global_var = float(np.var(x))
    variances = np.empty(n_states)
    for j in range(n_states):
        members = x[labels == j]
        v = float(np.var(members)) if len(members) > 1 else global_var
        if v < VARIANCE_FLOOR:
            v = VARIANCE_FLOOR
            floored = True
        variances[j] = v
    boost = 0.5
    transition = np.full((n_states, n_states), (1 - boost) / n_states) + boost * np.eye(n_states)
    initial = np.full(n_states, 1.0 / n_states)
    return GaussianHmm(transition, means, variances, initial), floored


def fit_hmm(trace, n_states: int = 8, seed: int = 0, max_iter: int = 200, tol: float = 1e-4) -> GaussianHmm:
    """Baum-Welch fit.

    Means are seeded with k-means++ on the observations, transitions start
    uniform with a diagonal boost. Stops when the log-likelihood gain drops
    below ``tol`` or after ``max_iter`` EM steps. Variances are floored at
    ``VARIANCE_FLOOR``; ``variance_floor_applied`` records whether that
    happened. The returned ``loglik_history[i]`` is the likelihood of the
    parameters after i M-steps.
    """
    x = _observations(trace)
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    if len(x) < n_states:
        raise ValueError(f"trace of length {len(x)} is shorter than n_states={n_states}")
    rng = np.random.default_rng(seed)
    model, floored = _initial_model(x, n_states, rng)
    history = []
    converged = False
    it = 0
    for it in range(max_iter + 1):
        ll, gamma, xi = _e_step(x, model)
        history.append(ll)
        if len(history) > 1 and history[-1] - history[-2] < tol:
            converged = True
            break
        if it == max_iter:
            break
        model, hit = _m_step(x, gamma, xi, model)
        floored = floored or hit
    model.loglik_history = history
    model.variance_floor_applied = floored
    model.n_iter = it
    model.converged = converged
    return model


def sample_states(model: GaussianHmm, n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` (hidden state, observation) pairs autoregressively."""
    rng = np.random.default_rng(seed)
    u = rng.random(n)
    z = rng.standard_normal(n)
    cum_init = np.cumsum(model.initial).tolist()
    cum_rows = [np.cumsum(row).tolist() for row in model.transition]
    last = model.n_states - 1
    states = np.empty(n, dtype=int)
    h = 0
    for t in range(n):
        cum = cum_init if t == 0 else cum_rows[h]
        h = min(bisect_right(cum, u[t]), last)
        states[t] = h
    obs = model.means[states] + np.sqrt(model.variances[states]) * z
    return states, obs
