"""NaN-ignoring statistics along the last axis.

Conventions: population variance (divide by the non-NaN count), skewness
m3 / m2**1.5, excess kurtosis m4 / m2**2 - 3. A slice whose non-NaN values are
all equal has variance 0 and undefined (NaN) skewness and kurtosis; an empty
or all-NaN slice gives NaN for everything.
"""
from __future__ import annotations

import numpy as np

from .dsl import AGGREGATORS


def _seqsum(a):
    # left-to-right sum: a zero standing in for a NaN is an exact no-op wherever
    # it sits, which pairwise summation does not guarantee
    if a.shape[-1] == 0:
        return np.zeros(a.shape[:-1])
    return np.cumsum(a, axis=-1)[..., -1]


def aggregate_all(x) -> dict[str, np.ndarray]:
    """Every aggregator at once, reducing the last axis of ``x``."""
    x = np.asarray(x, dtype=float)
    nan = np.isnan(x)
    n = x.shape[-1] - nan.sum(axis=-1)
    empty = n == 0
    safe_n = np.where(empty, 1, n)

    lo = np.where(nan, np.inf, x).min(axis=-1, initial=np.inf)
    hi = np.where(nan, -np.inf, x).max(axis=-1, initial=-np.inf)
    const = (lo == hi) & ~empty

    mean = _seqsum(np.where(nan, 0.0, x)) / safe_n
    d = np.where(nan, 0.0, x - mean[..., None])
    d2 = d * d
    m2 = _seqsum(d2) / safe_n
    m3 = _seqsum(d2 * d) / safe_n
    m4 = _seqsum(d2 * d2) / safe_n

    with np.errstate(divide="ignore", invalid="ignore"):
        skew = m3 / m2**1.5
        kurt = m4 / (m2 * m2) - 3.0
    var = np.where(const, 0.0, m2)
    skew = np.where(const, np.nan, skew)
    kurt = np.where(const, np.nan, kurt)

    out = {
        "nanmean": mean,
        "nanmin": lo,
        "nanmax": hi,
        "nanvar": var,
        "nanskew": skew,
        "nankurtosis": kurt,
    }
    for k in out:
        out[k] = np.where(empty, np.nan, out[k])
        if out[k].ndim == 0:
            out[k] = float(out[k])
    return out


def aggregate(x, agg: str):
    if agg not in AGGREGATORS:
        raise ValueError(f"unknown aggregator {agg!r}")
    return aggregate_all(x)[agg]


def segment_bounds(length: int, a: int, total: int) -> tuple[int, int]:
    """Slice bounds of part ``a`` (1-based) of ``total``: equal floor-sized
    parts, the last part absorbing the remainder."""
    if not 1 <= a <= total:
        raise ValueError(f"segment {a}/{total} out of range")
    size = length // total
    start = (a - 1) * size
    stop = length if a == total else a * size
    return start, stop


def segment_agg(arr, a: int, total: int, agg: str) -> float:
    arr = np.asarray(arr, dtype=float)
    lo, hi = segment_bounds(len(arr), a, total)
    return aggregate(arr[lo:hi], agg)


def group_cycles(n_cycles: int, k: int) -> list[range]:
    """Contiguous partition of cycle positions 0..N-1 into K groups."""
    if k < 1:
        raise ValueError("K must be >= 1")
    if n_cycles < k:
        raise ValueError(f"cannot split {n_cycles} cycles into {k} groups")
    return [range(*segment_bounds(n_cycles, a, k)) for a in range(1, k + 1)]


def activate(x, activator: str):
    if activator == "identity":
        return x
    if activator == "abs":
        return np.abs(x)
    raise ValueError(f"unknown activator {activator!r}")
