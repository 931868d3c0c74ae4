"""Synthetic cell under randomized constant-power discharge and two-stage charge.

Equivalent circuit: terminal voltage V = OCV(SOC) - I*R (discharge) or
OCV + I*R (charge), the current solved in closed form from P = V*I for each
sample. Per cycle n the available capacity and resistance are

    Q_n = Q0 * cap_T * (1 - fade * tf(T) * n_eff)
    R_n = r0 * r_T * (1 + r_growth * sqrt(n))

where n_eff counts cycles past the knee ``knee_fade_multiplier`` times.
Recorded Q and E are trapezoidal integrals of the recorded |I| and |W|.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..protocol.generate import ProtocolSpec
from .records import CellHistory, CellParams, ChargeSpec, CycleRecord, PhaseData

COLD_REF = 25.0     # deg C; colder cells fade faster and have higher resistance
HOT_REF = 55.0      # deg C; hotter cells fade faster
R_COLD_COEFF = 0.03     # fractional resistance increase per degree below COLD_REF
CAP_COLD_COEFF = 0.004  # fractional accessible-capacity loss per degree below COLD_REF
MAX_PHASE_SECONDS = 6 * 3600.0


def temperature_factor(params: CellParams) -> float:
    T = params.temperature
    return (1.0 + params.low_temp_penalty * max(0.0, COLD_REF - T)
            + params.high_temp_penalty * max(0.0, T - HOT_REF))


def capacity_at(params: CellParams, n: int) -> float:
    """Available capacity (Ah) during cycle ``n`` (1-based)."""
    if params.knee_cycle is None:
        n_eff = float(n)
    else:
        n_eff = min(n, params.knee_cycle) + params.knee_fade_multiplier * max(0, n - params.knee_cycle)
    cap_t = max(0.05, 1.0 - CAP_COLD_COEFF * max(0.0, COLD_REF - params.temperature))
    loss = params.fade_per_cycle * temperature_factor(params) * n_eff
    return params.rated_capacity * cap_t * max(0.0, 1.0 - loss)


def resistance_at(params: CellParams, n: int) -> float:
    r_t = 1.0 + R_COLD_COEFF * max(0.0, COLD_REF - params.temperature)
    return params.r0 * r_t * (1.0 + params.r_growth * math.sqrt(n))


class _Ocv:
    def __init__(self, soc, volts):
        self.soc = list(soc)
        self.v = list(volts)
        self.slope = [(self.v[i + 1] - self.v[i]) / (self.soc[i + 1] - self.soc[i])
                      for i in range(len(self.soc) - 1)]

    def __call__(self, s: float) -> float:
        # linear extrapolation beyond either end of the table
        i = bisect_right(self.soc, s) - 1
        i = 0 if i < 0 else min(i, len(self.slope) - 1)
        return self.v[i] + self.slope[i] * (s - self.soc[i])


@dataclass
class CellState:
    params: CellParams
    soc: float = 1.0
    cycle: int = 0   # completed cycles

    def __post_init__(self):
        self.ocv = _Ocv(self.params.ocv_soc, self.params.ocv_v)


def _discharge_current(p, ocv, r):
    if p == 0.0:
        return 0.0
    if r == 0.0:
        return p / ocv
    disc = ocv * ocv - 4.0 * r * p
    if disc < 0.0:
        return None
    return (ocv - math.sqrt(disc)) / (2.0 * r)


def _charge_current(p, ocv, r):
    if r == 0.0:
        return p / ocv
    return (-ocv + math.sqrt(ocv * ocv + 4.0 * r * p)) / (2.0 * r)


def _phase(rows, keep):
    if not keep:
        return None
    cols = list(zip(*rows))
    return PhaseData(*(np.array(c, dtype=float) for c in cols))


def _discharge(state: CellState, protocol: ProtocolSpec, cap: float, r: float, dt: float, keep: bool):
    p_ = state.params
    ocv = state.ocv
    soc0 = state.soc
    ends = []
    acc = 0.0
    for d, _ in protocol.steps:
        acc += d
        ends.append(acc)
    powers = [w for _, w in protocol.steps]
    total = acc
    rows = []
    q = e = 0.0
    prev_i = prev_w = None
    t = 0.0
    k = 0
    j = 0
    while True:
        while j < len(ends) - 1 and t >= ends[j] - 1e-9:
            j += 1
        power = powers[j] if powers else 0.0
        soc = soc0 if prev_i is None else soc0 - (q + prev_i * dt / 3600.0) / cap
        v_oc = ocv(soc)
        cur = _discharge_current(power, v_oc, r)
        volt = v_oc - cur * r if cur is not None else -math.inf
        cutoff = volt < p_.v_min or soc <= 0.0
        if cutoff:
            # truncated step: hold the terminal voltage at v_min
            cur = max(0.0, (v_oc - p_.v_min) / r) if r > 0 else 0.0
            volt = p_.v_min if r > 0 else v_oc
            power = volt * cur
        if prev_i is not None:
            q += 0.5 * (prev_i + cur) * dt / 3600.0
            e += 0.5 * (prev_w + power) * dt / 3600.0
        if keep:
            rows.append((t, volt, -cur, q, e, -power))
        prev_i, prev_w = cur, power
        if cutoff or t >= total - 1e-9 or t >= MAX_PHASE_SECONDS:
            break
        k += 1
        t = min(k * dt, total)
    state.soc = soc0 - q / cap
    return rows, q, e, j + 1 if powers else 0


def _charge(state: CellState, spec: ChargeSpec, cap: float, r: float, dt: float, keep: bool):
    p_ = state.params
    ocv = state.ocv
    soc0 = state.soc
    rows = []
    q = e = 0.0
    prev_i = prev_w = None
    stage = 0  # 0 high power, 1 low power, 2 constant voltage
    t = 0.0
    k = 0
    while True:
        soc = soc0 if prev_i is None else soc0 + (q + prev_i * dt / 3600.0) / cap
        v_oc = ocv(soc)
        done = False
        if stage < 2:
            power = spec.high_power if stage == 0 else spec.low_power
            cur = _charge_current(power, v_oc, r)
            volt = v_oc + cur * r
            if stage == 0 and volt >= spec.switch_voltage:
                stage = 1
                power = spec.low_power
                cur = _charge_current(power, v_oc, r)
                volt = v_oc + cur * r
            if volt >= p_.v_max:
                stage = 2
        if stage == 2:
            if r > 0:
                cur = max(0.0, (p_.v_max - v_oc) / r)
                volt = p_.v_max
            else:
                cur = 0.0
                volt = v_oc
            power = volt * cur
            done = cur < spec.taper_current and k > 0
        if prev_i is not None:
            q += 0.5 * (prev_i + cur) * dt / 3600.0
            e += 0.5 * (prev_w + power) * dt / 3600.0
        if keep:
            rows.append((t, volt, cur, q, e, power))
        prev_i, prev_w = cur, power
        if done or soc >= 1.05 or t >= MAX_PHASE_SECONDS:
            break
        k += 1
        t = k * dt
    state.soc = soc0 + q / cap
    return rows, q, e


def run_cycle(state: CellState, protocol: ProtocolSpec, charge: ChargeSpec = ChargeSpec(),
              dt: float = 1.0, keep_traces: bool = True) -> CycleRecord:
    """Discharge along ``protocol`` from the current state, then recharge.

    The discharge ends at v_min (the offending sample is truncated to the
    power that holds v_min) or when the protocol runs out; the charge ends
    when the constant-voltage taper current falls below ``taper_current``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    charge.validate(state.params)
    n = state.cycle + 1
    cap = capacity_at(state.params, n)
    r = resistance_at(state.params, n)
    if cap <= 0:
        raise ValueError(f"cycle {n}: no capacity left")
    d_rows, qd, ed, n_steps = _discharge(state, protocol, cap, r, dt, keep_traces)
    c_rows, qc, ec = _charge(state, charge, cap, r, dt, keep_traces)
    state.cycle = n
    return CycleRecord(
        cycle_index=n,
        temperature=state.params.temperature,
        protocol_id=protocol.protocol_id,
        discharge_capacity=qd,
        charge_capacity=qc,
        discharge_energy=ed,
        charge_energy=ec,
        n_steps=n_steps,
        discharge=_phase(d_rows, keep_traces),
        charge=_phase(c_rows, keep_traces),
    )


def run_life(params: CellParams, protocols: Iterable[ProtocolSpec], max_cycles: int = 1000,
             charge: ChargeSpec = ChargeSpec(), dt: float = 1.0, keep_traces: int | None = None,
             stop_fraction: float = 0.5, cell_id: str | None = None) -> CellHistory:
    """Cycle a fresh cell with one protocol per cycle.

    Stops after ``max_cycles``, when a cycle delivers less than
    ``stop_fraction`` of rated capacity, or when ``protocols`` is exhausted.
    Only the first ``keep_traces`` cycles keep sampled traces (all when None).
    """
    state = CellState(params)
    history = CellHistory(cell_id or f"cell-{params.seed}", params)
    it = iter(protocols)
    reason = "max_cycles"
    for n in range(1, max_cycles + 1):
        try:
            proto = next(it)
        except StopIteration:
            reason = "protocol_exhausted"
            if n == 1:
                raise ValueError("run_life needs at least one protocol") from None
            break
        keep = keep_traces is None or n <= keep_traces
        rec = run_cycle(state, proto, charge, dt, keep)
        history.cycles.append(rec)
        if rec.discharge_capacity < stop_fraction * params.rated_capacity:
            reason = "reached_eol"
            break
    history.end_reason = reason
    return history
