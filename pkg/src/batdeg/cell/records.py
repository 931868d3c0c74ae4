"""Cell parameters, per-cycle records and their JSON-lines persistence.

On disk a cell is two files:

``<cell_id>.jsonl``
    one line per (cycle, phase), discharge line before charge line::

        {"cell_id", "cycle", "temp_c", "phase": "discharge"|"charge",
         "t", "v", "i", "q", "e", "w", "protocol_id",
         "capacity_ah", "energy_wh", "n_steps"}

    ``i`` and ``w`` are signed (discharge negative). Cycles simulated without
    kept traces carry empty arrays; ``capacity_ah``/``energy_wh`` always hold
    the phase totals.
``<cell_id>.meta.json``
    cell parameters and the end reason.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

# 21-point NMC/graphite-like open-circuit voltage curve.
DEFAULT_OCV_SOC = (0.02, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50,
                   0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95, 1.00)
DEFAULT_OCV_V = (3.00, 3.30, 3.45, 3.52, 3.56, 3.59, 3.61, 3.63, 3.65, 3.68, 3.71,
                 3.74, 3.78, 3.82, 3.86, 3.90, 3.95, 4.00, 4.06, 4.12, 4.20)


@dataclass
class CellParams:
    rated_capacity: float = 2.2
    v_min: float = 2.75
    v_max: float = 4.2
    ocv_soc: tuple = DEFAULT_OCV_SOC
    ocv_v: tuple = DEFAULT_OCV_V
    r0: float = 0.05
    r_growth: float = 0.01
    fade_per_cycle: float = 5e-4
    knee_cycle: Optional[int] = None
    knee_fade_multiplier: float = 6.0
    temperature: float = 25.0
    low_temp_penalty: float = 0.02
    high_temp_penalty: float = 0.015
    seed: int = 0

    def __post_init__(self):
        self.ocv_soc = tuple(float(s) for s in self.ocv_soc)
        self.ocv_v = tuple(float(v) for v in self.ocv_v)
        self.validate()

    def validate(self) -> None:
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be below v_max")
        if self.rated_capacity <= 0:
            raise ValueError("rated_capacity must be positive")
        if len(self.ocv_soc) != len(self.ocv_v) or len(self.ocv_soc) < 2:
            raise ValueError("OCV table needs matching SOC and V columns")
        if np.any(np.diff(self.ocv_soc) <= 0) or np.any(np.diff(self.ocv_v) <= 0):
            raise ValueError("OCV table must be strictly increasing")
        if min(self.ocv_v) < self.v_min or max(self.ocv_v) > self.v_max:
            raise ValueError("OCV table must lie within [v_min, v_max]")
        if self.r0 < 0 or self.r_growth < 0 or self.fade_per_cycle < 0:
            raise ValueError("resistance and fade parameters must be non-negative")
        if self.knee_cycle is not None and self.knee_fade_multiplier <= 1:
            raise ValueError("knee_fade_multiplier must exceed 1")


@dataclass
class ChargeSpec:
    """Two-stage constant-power charge with a constant-voltage taper at v_max."""

    high_power: float = 15.0
    low_power: float = 8.0
    switch_voltage: float = 4.1
    taper_current: float = 0.08

    def validate(self, params: CellParams) -> None:
        if not self.high_power > self.low_power > 0:
            raise ValueError("need high_power > low_power > 0")
        if not params.v_min < self.switch_voltage < params.v_max:
            raise ValueError("switch_voltage must lie strictly inside (v_min, v_max)")
        if self.taper_current <= 0:
            raise ValueError("taper_current must be positive")


@dataclass
class PhaseData:
    t: np.ndarray
    V: np.ndarray
    I: np.ndarray
    Q: np.ndarray
    E: np.ndarray
    W: np.ndarray

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class CycleRecord:
    cycle_index: int
    temperature: float
    protocol_id: str
    discharge_capacity: float
    charge_capacity: float
    discharge_energy: float
    charge_energy: float
    n_steps: int = 0
    discharge: Optional[PhaseData] = None
    charge: Optional[PhaseData] = None

    @property
    def has_traces(self) -> bool:
        return self.discharge is not None and self.charge is not None

    def phase(self, direction: str) -> PhaseData:
        data = self.discharge if direction == "d" else self.charge
        if data is None:
            raise ValueError(f"cycle {self.cycle_index} has no stored traces")
        return data


@dataclass
class CellHistory:
    cell_id: str
    params: CellParams
    cycles: list = field(default_factory=list)
    end_reason: str = "max_cycles"

    def discharge_capacities(self) -> np.ndarray:
        return np.array([c.discharge_capacity for c in self.cycles], dtype=float)

    def __len__(self) -> int:
        return len(self.cycles)


_PHASES = (("discharge", "discharge_capacity", "discharge_energy"),
           ("charge", "charge_capacity", "charge_energy"))


def _phase_line(cell_id: str, rec: CycleRecord, phase: str, cap_key: str, e_key: str) -> dict:
    data: PhaseData | None = getattr(rec, phase)
    arrays = {k: [] for k in ("t", "v", "i", "q", "e", "w")}
    if data is not None:
        arrays = {"t": data.t, "v": data.V, "i": data.I, "q": data.Q, "e": data.E, "w": data.W}
        arrays = {k: [float(x) for x in v] for k, v in arrays.items()}
    return {
        "cell_id": cell_id,
        "cycle": rec.cycle_index,
        "temp_c": rec.temperature,
        "phase": phase,
        **arrays,
        "protocol_id": rec.protocol_id,
        "capacity_ah": getattr(rec, cap_key),
        "energy_wh": getattr(rec, e_key),
        "n_steps": rec.n_steps,
    }


def write_history(history: CellHistory, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{history.cell_id}.jsonl"
    tmp = path.with_suffix(".jsonl.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for rec in history.cycles:
            for phase, cap_key, e_key in _PHASES:
                fh.write(json.dumps(_phase_line(history.cell_id, rec, phase, cap_key, e_key)) + "\n")
    os.replace(tmp, path)
    meta = {"cell_id": history.cell_id, "params": asdict(history.params), "end_reason": history.end_reason}
    with open(directory / f"{history.cell_id}.meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    return path


def _phase_from_line(line: dict) -> PhaseData | None:
    if not line["t"]:
        return None
    return PhaseData(*(np.asarray(line[k], dtype=float) for k in ("t", "v", "i", "q", "e", "w")))


def read_history(path) -> CellHistory:
    path = Path(path)
    meta_path = path.with_name(path.name[: -len(".jsonl")] + ".meta.json")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    params = CellParams(**meta["params"])
    lines: dict[int, dict[str, dict]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                line = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            lines.setdefault(int(line["cycle"]), {})[line["phase"]] = line
    cycles = []
    for idx in sorted(lines):
        pair = lines[idx]
        if set(pair) != {"discharge", "charge"}:
            raise ValueError(f"{path}: cycle {idx} is missing a phase")
        d, c = pair["discharge"], pair["charge"]
        cycles.append(CycleRecord(
            cycle_index=idx,
            temperature=float(d["temp_c"]),
            protocol_id=d["protocol_id"],
            discharge_capacity=float(d["capacity_ah"]),
            charge_capacity=float(c["capacity_ah"]),
            discharge_energy=float(d["energy_wh"]),
            charge_energy=float(c["energy_wh"]),
            n_steps=int(d.get("n_steps", 0)),
            discharge=_phase_from_line(d),
            charge=_phase_from_line(c),
        ))
    return CellHistory(meta["cell_id"], params, cycles, meta["end_reason"])


def read_dataset(directory) -> list[CellHistory]:
    paths = sorted(Path(directory).glob("*.jsonl"))
    return [read_history(p) for p in paths]
