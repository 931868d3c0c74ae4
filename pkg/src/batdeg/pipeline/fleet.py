"""Synthetic cell fleets driven by HMM-sampled discharge protocols.

Each cell draws a usage intensity that scales its protocol powers; harder
used cells fade faster (fade ~ usage ** exponent), on top of a log-normal
cell-to-cell spread and the simulator's temperature dependence.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..cell.records import CellHistory, CellParams, ChargeSpec
from ..cell.sim import run_life
from ..protocol.generate import POWER_CAP, ZERO_KEEP_RATIO, generate_protocol
from ..protocol.hmm import GaussianHmm, fit_hmm
from ..protocol.vehicle import PowerTrace, scale_power, speed_to_power, synthetic_drive_cycle

DEFAULT_TEMPERATURES = (-10.0, 0.0, 10.0, 25.0, 40.0, 55.0, 70.0)


@dataclass(frozen=True)
class FleetConfig:
    n_cells: int = 40
    temperatures: tuple = DEFAULT_TEMPERATURES
    knee_fraction: float = 0.0
    seed: int = 0
    fade_per_cycle: float = 1e-3
    fade_sd: float = 0.1             # log-normal spread of the fade rate
    usage_range: tuple = (0.7, 1.3)  # per-cell protocol power scale
    usage_fade_exponent: float = 1.5 # fade rate grows as usage ** exponent
    r0: float = 0.05
    r0_sd: float = 0.1
    r_growth: float = 0.01
    knee_cycle_range: tuple = (90, 140)
    knee_fade_multiplier: float = 6.0
    knee_r_growth_factor: float = 8.0   # knee cells also show faster early resistance growth
    max_cycles: int = 600
    stop_fraction: float = 0.5
    keep_traces: int = 50
    dt: float = 5.0
    protocol_duration: float = 21600.0   # long enough that discharges end at v_min
    protocol_step: float = 140.0
    cap: float = POWER_CAP
    zero_keep_ratio: float = ZERO_KEEP_RATIO
    cell_overrides: dict = field(default_factory=dict)   # temperature -> {param: value}

    def __post_init__(self):
        if self.n_cells < 1:
            raise ValueError("n_cells must be >= 1")
        if not self.temperatures:
            raise ValueError("at least one temperature is required")
        if not 0 <= self.knee_fraction <= 1:
            raise ValueError("knee_fraction must lie in [0, 1]")
        lo, hi = self.knee_cycle_range
        if not 1 <= lo <= hi:
            raise ValueError("knee_cycle_range must satisfy 1 <= lo <= hi")
        if not 0 < self.usage_range[0] <= self.usage_range[1]:
            raise ValueError("usage_range must satisfy 0 < lo <= hi")
        if self.max_cycles < 1 or self.keep_traces < 0 or self.dt <= 0:
            raise ValueError("max_cycles >= 1, keep_traces >= 0 and dt > 0 are required")


def default_power_model(seed: int = 0, n_states: int = 8, mean_power: float = 7.0,
                        duration: float = 3600.0, max_iter: int = 200) -> GaussianHmm:
    """HMM fitted to the built-in synthetic drive cycle at cell scale."""
    trace = scale_power(speed_to_power(synthetic_drive_cycle(duration, seed)), mean_power)
    return fit_hmm(PowerTrace(trace.time, trace.power), n_states, seed=seed, max_iter=max_iter)


@dataclass(frozen=True)
class CellPlan:
    cell_id: str
    params: CellParams
    knee: bool
    protocol_seed: int
    usage: float = 1.0


def plan_fleet(cfg: FleetConfig) -> list[CellPlan]:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_cells
    n_knee = int(round(cfg.knee_fraction * n))
    knee_cells = set(rng.permutation(n)[:n_knee].tolist())
    plans = []
    for i in range(n):
        temp = float(cfg.temperatures[i % len(cfg.temperatures)])
        usage = float(rng.uniform(*cfg.usage_range))
        fade = (cfg.fade_per_cycle * usage ** cfg.usage_fade_exponent
                * float(np.exp(rng.normal(0.0, cfg.fade_sd))))
        r0 = cfg.r0 * float(np.exp(rng.normal(0.0, cfg.r0_sd)))
        knee_at = int(rng.integers(cfg.knee_cycle_range[0], cfg.knee_cycle_range[1] + 1))
        knee = i in knee_cells
        params = CellParams(
            fade_per_cycle=fade, r0=r0,
            r_growth=cfg.r_growth * (cfg.knee_r_growth_factor if knee else 1.0),
            knee_cycle=knee_at if knee else None,
            knee_fade_multiplier=cfg.knee_fade_multiplier,
            temperature=temp, seed=cfg.seed * 100003 + i,
        )
        over = cfg.cell_overrides.get(temp) or cfg.cell_overrides.get(str(temp)) or {}
        if over:
            params = replace(params, **over)
        plans.append(CellPlan(f"cell{i:03d}", params, knee, cfg.seed * 1_000_003 + i * 10_007, usage))
    return plans


def scaled_model(model: GaussianHmm, factor: float) -> GaussianHmm:
    """Same chain with every emission scaled by ``factor`` (means x f, variances x f^2)."""
    return GaussianHmm(model.transition.copy(), model.means * factor, model.variances * factor ** 2,
                       model.initial.copy())


def _protocols(model, plan: CellPlan, cfg: FleetConfig):
    if plan.usage != 1.0:
        model = scaled_model(model, plan.usage)
    for n in range(cfg.max_cycles):
        yield generate_protocol(model, plan.protocol_seed + n * 7919, cfg.protocol_duration,
                                cfg.protocol_step, cfg.cap, cfg.zero_keep_ratio)


def simulate_cell(model: GaussianHmm, plan: CellPlan, cfg: FleetConfig) -> CellHistory:
    return run_life(plan.params, _protocols(model, plan, cfg), cfg.max_cycles, ChargeSpec(), cfg.dt,
                    cfg.keep_traces, cfg.stop_fraction, plan.cell_id)


def _sim_task(args):
    return simulate_cell(*args)


def build_fleet(cfg: FleetConfig, model: GaussianHmm | None = None, jobs: int = 1) -> list[CellHistory]:
    """Simulate every cell of the fleet; identical config and model give identical histories."""
    model = model or default_power_model(cfg.seed)
    tasks = [(model, p, cfg) for p in plan_fleet(cfg)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sim_task, tasks))
    return [_sim_task(t) for t in tasks]
