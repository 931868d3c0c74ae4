from .records import (CellHistory, CellParams, ChargeSpec, CycleRecord, PhaseData,
                      read_dataset, read_history, write_history)
from .sim import CellState, capacity_at, resistance_at, run_cycle, run_life, temperature_factor

__all__ = [
    "CellHistory", "CellParams", "ChargeSpec", "CycleRecord", "PhaseData",
    "read_dataset", "read_history", "write_history",
    "CellState", "capacity_at", "resistance_at", "run_cycle", "run_life", "temperature_factor",
]
