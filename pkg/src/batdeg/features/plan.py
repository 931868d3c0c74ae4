"""Three-stage evaluation plan with shared subexpressions.

Stage 1 nodes are per-cycle descriptors (signal, segment, inner aggregator);
stage 2 nodes aggregate one descriptor over one cycle group (descriptor,
group, outer aggregator); stage 3 is one column per input expression,
either a stage-2 node or the difference of two, then the activator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsl import Diff, FeatureExpr, FeatureValidationError, render


@dataclass(frozen=True)
class EvalPlan:
    exprs: tuple
    K: int
    D: int
    stage1: tuple          # ((signal_key, seg, inner), ...)
    stage2: tuple          # ((stage1_index, group, outer), ...), group 1-based
    left: np.ndarray       # stage-2 index per column
    right: np.ndarray      # stage-2 index subtracted per column, -1 for single selectors
    use_abs: np.ndarray    # bool per column

    @property
    def names(self) -> list[str]:
        return [render(e) for e in self.exprs]

    @property
    def signal_keys(self) -> list[str]:
        return sorted({s for s, _, _ in self.stage1})

    def __len__(self) -> int:
        return len(self.exprs)


def compile_plan(exprs) -> EvalPlan:
    exprs = tuple(exprs)
    if not exprs:
        raise ValueError("nothing to compile")
    K = exprs[0].n_groups
    D = exprs[0].seg_total
    s1_index: dict = {}
    s2_index: dict = {}

    def node2(key1, group, outer):
        i1 = s1_index.setdefault(key1, len(s1_index))
        return s2_index.setdefault((i1, group, outer), len(s2_index))

    left = np.empty(len(exprs), dtype=np.int64)
    right = np.full(len(exprs), -1, dtype=np.int64)
    use_abs = np.empty(len(exprs), dtype=bool)
    for j, e in enumerate(exprs):
        if not isinstance(e, FeatureExpr):
            raise TypeError(f"expected FeatureExpr, got {type(e).__name__}")
        if e.n_groups != K or e.seg_total != D:
            raise FeatureValidationError(
                f"mixed space configs: K={e.n_groups}, D={e.seg_total} after K={K}, D={D} "
                f"({render(e)})")
        key1 = (e.signal_key, e.seg, e.inner)
        sel = e.selector
        left[j] = node2(key1, sel.a, e.outer)
        if isinstance(sel, Diff):
            right[j] = node2(key1, sel.c, e.outer)
        use_abs[j] = e.activator == "abs"
    stage1 = tuple(sorted(s1_index, key=s1_index.get))
    stage2 = tuple(sorted(s2_index, key=s2_index.get))
    return EvalPlan(exprs, K, D, stage1, stage2, left, right, use_abs)


compile = compile_plan  # noqa: A001  (name used by the feature grammar API)
