"""Fixed-length intra-cycle signals derived from one cycle's raw samples.

For each phase (``d`` discharge, ``c`` charge):

* ``VQ``: V on a uniform capacity grid over [0, Q_end]
* ``QV``: Q on a uniform voltage grid over [v_min, v_max], NaN outside the
  observed voltage range
* ``I``, ``V``, ``E``, ``W``: raw series on a uniform time grid over [0, t_end]
* ``dVdQ``: (V[2k+1] - V[2k]) / (Q[2k+1] - Q[2k]) on the raw samples; a zero
  capacity step gives NaN
"""
from __future__ import annotations

import numpy as np

from ..cell.records import CycleRecord, PhaseData
from .dsl import DIRECTIONS

GRID_LEN = 100


def _strictly_increasing(x: np.ndarray) -> np.ndarray:
    """Mask keeping each sample that exceeds every earlier kept sample."""
    keep = np.zeros(len(x), dtype=bool)
    if len(x):
        prev_max = np.maximum.accumulate(x)
        keep[0] = True
        keep[1:] = x[1:] > prev_max[:-1]
    return keep


def _vq(ph: PhaseData, grid_len: int) -> np.ndarray:
    q, v = ph.Q, ph.V
    keep = _strictly_increasing(q)
    q, v = q[keep], v[keep]
    grid = np.linspace(0.0, q[-1], grid_len)
    return np.interp(grid, q, v)


def _qv(ph: PhaseData, grid_len: int, v_min: float, v_max: float, discharge: bool) -> np.ndarray:
    # Q(V) is only single-valued along the monotone voltage envelope: the
    # running minimum while discharging, the running maximum while charging.
    v, q = ph.V, ph.Q
    if discharge:
        keep = _strictly_increasing(-v)
        v, q = v[keep][::-1], q[keep][::-1]
    else:
        keep = _strictly_increasing(v)
        v, q = v[keep], q[keep]
    grid = np.linspace(v_min, v_max, grid_len)
    out = np.interp(grid, v, q)
    out[(grid < v[0]) | (grid > v[-1])] = np.nan
    return out


def _dvdq(ph: PhaseData) -> np.ndarray:
    m = len(ph.V) // 2
    dv = ph.V[1:2 * m:2] - ph.V[0:2 * m:2]
    dq = ph.Q[1:2 * m:2] - ph.Q[0:2 * m:2]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = dv / dq
    out[dq == 0] = np.nan
    return out


def resample_phase(ph: PhaseData, direction: str, grid_len: int = GRID_LEN,
                   v_min: float = 2.75, v_max: float = 4.2) -> dict[str, np.ndarray]:
    if grid_len < 2:
        raise ValueError("grid_len must be >= 2")
    t_grid = np.linspace(0.0, ph.t[-1], grid_len)
    t = ph.t
    out = {
        "VQ": _vq(ph, grid_len),
        "QV": _qv(ph, grid_len, v_min, v_max, direction == "d"),
        "dVdQ": _dvdq(ph),
        "I": np.interp(t_grid, t, ph.I),
        "V": np.interp(t_grid, t, ph.V),
        "E": np.interp(t_grid, t, ph.E),
        "W": np.interp(t_grid, t, ph.W),
    }
    return {f"{k}_{direction}": val for k, val in out.items()}


def resample_cycle(rec: CycleRecord, grid_len: int = GRID_LEN, v_min: float = 2.75, v_max: float = 4.2,
                   cell_id: str = "?", directions=DIRECTIONS) -> dict[str, np.ndarray]:
    """All signals of both phases, keyed ``<signal>_<direction>``."""
    out: dict[str, np.ndarray] = {}
    for d in directions:
        ph = getattr(rec, "discharge" if d == "d" else "charge")
        name = "discharge" if d == "d" else "charge"
        if ph is None or len(ph.t) < 2:
            n = 0 if ph is None else len(ph.t)
            raise ValueError(f"cell {cell_id} cycle {rec.cycle_index} {name}: "
                             f"need >= 2 samples, got {n}")
        out.update(resample_phase(ph, d, grid_len, v_min, v_max))
    return out
