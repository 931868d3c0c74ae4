"""Feature vectors for cells: plan-based (shared subexpressions) and naive.

``evaluate_naive`` walks every expression on its own and serves as the
reference for ``evaluate``. Both read the same per-cycle signal stacks, so
any disagreement comes from the plan's node sharing and gathering.

Diff selectors aggregate each group first and then subtract
(``outer(group a) - outer(group c)``), since groups can hold different
numbers of cycles.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..cell.records import CellHistory
from .aggregate import aggregate_all, group_cycles, segment_bounds
from .dsl import AGGREGATORS, Diff, parse
from .plan import EvalPlan
from .signals import GRID_LEN, resample_cycle

_AGG_POS = {a: i for i, a in enumerate(AGGREGATORS)}


class CellSignals:
    """Resampled signals of a cell's first N cycles, stacked per signal key."""

    def __init__(self, history: CellHistory, n_cycles: int, directions, grid_len: int = GRID_LEN):
        if len(history.cycles) < n_cycles:
            raise ValueError(f"cell {history.cell_id}: {len(history.cycles)} cycles, need {n_cycles}")
        p = history.params
        per_cycle = [
            resample_cycle(rec, grid_len, p.v_min, p.v_max, history.cell_id, directions)
            for rec in history.cycles[:n_cycles]
        ]
        self.n_cycles = n_cycles
        self.cell_id = history.cell_id
        self._rows = {k: [c[k] for c in per_cycle] for k in per_cycle[0]}
        self._stacked: dict[str, np.ndarray] = {}
        self._seg_cache: dict = {}

    def segment_stack(self, key: str, seg: int, total: int) -> np.ndarray:
        """(n_cycles, L) array holding each cycle's segment, NaN-padded when
        cycles differ in length (padding never changes a NaN-ignoring statistic)."""
        ck = (key, seg, total)
        if ck in self._seg_cache:
            return self._seg_cache[ck]
        rows = self._rows[key]
        lengths = {len(r) for r in rows}
        if len(lengths) == 1:
            if key not in self._stacked:
                self._stacked[key] = np.ascontiguousarray(np.vstack(rows))
            lo, hi = segment_bounds(lengths.pop(), seg, total)
            out = self._stacked[key][:, lo:hi]
        else:
            parts = [r[slice(*segment_bounds(len(r), seg, total))] for r in rows]
            width = max(len(x) for x in parts)
            out = np.full((len(parts), max(width, 1)), np.nan)
            for i, x in enumerate(parts):
                out[i, :len(x)] = x
        self._seg_cache[ck] = out
        return out


def _directions(plan: EvalPlan):
    return tuple(sorted({key.rsplit("_", 1)[1] for key, _, _ in plan.stage1}, reverse=True))


def evaluate(plan: EvalPlan, history: CellHistory, N: int = 50, grid_len: int = GRID_LEN,
             signals: CellSignals | None = None) -> np.ndarray:
    """Feature vector of one cell, columns in plan order."""
    if N < plan.K:
        raise ValueError(f"N={N} must be >= K={plan.K}")
    sig = signals or CellSignals(history, N, _directions(plan), grid_len)

    # stage 1: descriptor per (cycle, node); stored node-major for stage 2
    desc = np.empty((len(plan.stage1), N))
    by_segment: dict = {}
    for i, (key, seg, inner) in enumerate(plan.stage1):
        by_segment.setdefault((key, seg), []).append((i, inner))
    for (key, seg), nodes in by_segment.items():
        stats = aggregate_all(sig.segment_stack(key, seg, plan.D))
        for i, inner in nodes:
            desc[i] = stats[inner]

    # stage 2: every outer aggregator for every descriptor and group
    groups = group_cycles(N, plan.K)
    full = np.empty((plan.K, len(AGGREGATORS), len(plan.stage1)))
    for g, rows in enumerate(groups):
        stats = aggregate_all(desc[:, rows.start:rows.stop])
        for o, agg in enumerate(AGGREGATORS):
            full[g, o] = stats[agg]
    s1 = np.fromiter((n[0] for n in plan.stage2), dtype=np.int64, count=len(plan.stage2))
    gi = np.fromiter((n[1] - 1 for n in plan.stage2), dtype=np.int64, count=len(plan.stage2))
    oi = np.fromiter((_AGG_POS[n[2]] for n in plan.stage2), dtype=np.int64, count=len(plan.stage2))
    s2 = full[gi, oi, s1]

    # stage 3: select, subtract, activate
    out = s2[plan.left].copy()
    diff = plan.right >= 0
    out[diff] -= s2[plan.right[diff]]
    out[plan.use_abs] = np.abs(out[plan.use_abs])
    return out


def evaluate_naive(exprs, history: CellHistory, N: int = 50, grid_len: int = GRID_LEN,
                   signals: CellSignals | None = None) -> np.ndarray:
    """Reference evaluation: each expression computed independently, no sharing."""
    exprs = list(exprs)
    dirs = tuple(sorted({e.direction for e in exprs}, reverse=True))
    sig = signals or CellSignals(history, N, dirs, grid_len)
    out = np.empty(len(exprs))
    for j, e in enumerate(exprs):
        seg = sig.segment_stack(e.signal_key, e.seg, e.seg_total)
        descriptor = np.ascontiguousarray(aggregate_all(seg)[e.inner])
        groups = group_cycles(N, e.n_groups)

        def outer(a):
            rows = groups[a - 1]
            return aggregate_all(descriptor[rows.start:rows.stop])[e.outer]

        sel = e.selector
        val = outer(sel.a)
        if isinstance(sel, Diff):
            val = val - outer(sel.c)
        out[j] = abs(val) if e.activator == "abs" else val
    return out


@dataclass
class FeatureMatrix:
    cell_ids: list
    names: list
    values: np.ndarray   # (cells, features)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.cell_ids), len(self.names)):
            raise ValueError(f"matrix shape {self.values.shape} does not match "
                             f"{len(self.cell_ids)} cells x {len(self.names)} names")

    def row(self, cell_id: str) -> np.ndarray:
        return self.values[self.cell_ids.index(cell_id)]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def subset(self, cell_ids: Sequence[str]) -> "FeatureMatrix":
        idx = [self.cell_ids.index(c) for c in cell_ids]
        return FeatureMatrix(list(cell_ids), list(self.names), self.values[idx])


def _eval_one(args):
    plan, history, N, grid_len = args
    try:
        return evaluate(plan, history, N, grid_len)
    except Exception as exc:
        raise ValueError(f"cell {history.cell_id}: {exc}") from exc


def evaluate_matrix(plan: EvalPlan, dataset: Sequence[CellHistory], N: int = 50,
                    grid_len: int = GRID_LEN, jobs: int = 1) -> FeatureMatrix:
    """One row per cell, in dataset order; ``jobs > 1`` evaluates cells in worker processes."""
    dataset = list(dataset)
    tasks = [(plan, h, N, grid_len) for h in dataset]
    if jobs > 1 and len(dataset) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_eval_one, tasks))
    else:
        rows = [_eval_one(t) for t in tasks]
    values = np.vstack(rows) if rows else np.empty((0, len(plan)))
    return FeatureMatrix([h.cell_id for h in dataset], plan.names, values)


def _fmt(x: float) -> str:
    return "NaN" if math.isnan(x) else repr(float(x))


def write_feature_matrix(path, fm: FeatureMatrix) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", *fm.names])
        for cid, row in zip(fm.cell_ids, fm.values):
            w.writerow([cid, *(_fmt(x) for x in row.tolist())])


def read_feature_matrix(path, validate_names: bool = False) -> FeatureMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "cell_id":
            raise ValueError(f"{path}: first column must be cell_id")
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            ids.append(row[0])
            rows.append([float(x) for x in row[1:]])
    names = header[1:]
    if validate_names:
        for n in names:
            parse(n)
    values = np.array(rows, dtype=float) if rows else np.empty((0, len(names)))
    return FeatureMatrix(ids, names, values)
