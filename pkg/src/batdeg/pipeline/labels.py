"""Lifespan and knee labels from capacity histories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cell.records import CellHistory


@dataclass(frozen=True)
class LifeLabelConfig:
    nominal_window: int = 5
    eol_fraction: float = 0.8
    early_window: int = 50
    min_cycles: int = 50

    def __post_init__(self):
        if not 0 < self.eol_fraction < 1:
            raise ValueError("eol_fraction must lie in (0, 1)")
        if self.nominal_window < 1 or self.early_window < 1 or self.min_cycles < 0:
            raise ValueError("window sizes must be positive")


@dataclass(frozen=True)
class KneeConfig:
    interval: int = 50
    threshold: float = 5e-4      # Ah per cycle
    mode: str = "max_slope_change"

    def __post_init__(self):
        if self.interval < 2:
            raise ValueError("interval must be >= 2")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.mode not in ("max_slope", "max_slope_change"):
            raise ValueError(f"unknown knee mode {self.mode!r}")


@dataclass(frozen=True)
class LifeLabel:
    life: int | None     # first cycle below eol_fraction x nominal
    censored: bool
    nominal: float


@dataclass(frozen=True)
class KneeLabel:
    knee: bool
    slopes: np.ndarray   # capacity decrease per cycle for each interval (positive = fading)
    changes: np.ndarray  # slopes[i+1] - slopes[i]


def _capacities(history) -> np.ndarray:
    if isinstance(history, CellHistory):
        return history.discharge_capacities()
    return np.asarray(history, dtype=float)


def nominal_capacity(history, window: int = 5) -> float:
    """Mean discharge capacity of the first ``window`` cycles."""
    q = _capacities(history)
    if len(q) < window:
        raise ValueError(f"need {window} cycles for the nominal capacity, got {len(q)}")
    return float(np.mean(q[:window]))


def cycle_life(history, cfg: LifeLabelConfig = LifeLabelConfig()) -> LifeLabel:
    """First cycle (1-based) whose capacity is strictly below eol_fraction x nominal."""
    q = _capacities(history)
    nominal = nominal_capacity(q, cfg.nominal_window)
    below = np.flatnonzero(q < cfg.eol_fraction * nominal)
    if len(below) == 0:
        return LifeLabel(None, True, nominal)
    return LifeLabel(int(below[0]) + 1, False, nominal)


def interval_slopes(q: np.ndarray, interval: int) -> np.ndarray:
    """Least-squares fade rate over consecutive, non-overlapping windows;
    a trailing partial window is ignored."""
    n = len(q) // interval
    x = np.arange(interval, dtype=float)
    xc = x - x.mean()
    windows = q[:n * interval].reshape(n, interval)
    return -(windows - windows.mean(axis=1, keepdims=True)) @ xc / (xc @ xc)


def knee_label(history, cfg: KneeConfig = KneeConfig()) -> KneeLabel:
    q = _capacities(history)
    if len(q) < 2 * cfg.interval:
        raise ValueError(f"knee labelling needs >= {2 * cfg.interval} cycles, got {len(q)}")
    slopes = interval_slopes(q, cfg.interval)
    changes = np.diff(slopes)
    stat = slopes.max() if cfg.mode == "max_slope" else changes.max()
    return KneeLabel(bool(stat > cfg.threshold), slopes, changes)


@dataclass
class DatasetLabels:
    life: dict           # cell_id -> cycle life, None when censored or too short
    knee: dict           # cell_id -> 0/1, None when too short to label
    pattern: dict        # cell_id -> synthetic pattern number, None when unlabelled
    excluded: dict       # cell_id -> reason the cell has no life label

    def summary(self) -> dict:
        reasons: dict = {}
        for r in self.excluded.values():
            reasons[r] = reasons.get(r, 0) + 1
        return {
            "n_cells": len(self.life),
            "n_life": sum(v is not None for v in self.life.values()),
            "n_knee": sum(v is not None for v in self.knee.values()),
            "n_knee_positive": sum(v == 1 for v in self.knee.values()),
            "n_pattern": sum(v is not None for v in self.pattern.values()),
            "excluded": reasons,
        }

    def to_json(self) -> dict:
        return {"life": self.life, "knee": self.knee, "pattern": self.pattern,
                "excluded": self.excluded, "summary": self.summary()}

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetLabels":
        return cls(obj["life"], obj["knee"], obj["pattern"], obj["excluded"])


TEMPERATURE_BANDS = (15.0, 45.0)   # below: low, up to: medium, above: high


def temperature_band(temp: float) -> int:
    lo, hi = TEMPERATURE_BANDS
    return 0 if temp < lo else (1 if temp <= hi else 2)


def pattern_labels(temps: dict, lives: dict) -> dict:
    """Synthetic failure patterns: temperature band (low/medium/high) crossed
    with shorter/longer life than the band median, numbered 1..6 in that order.
    Cells without a life stay unlabelled."""
    out = {c: None for c in temps}
    by_band: dict = {}
    for c, life in lives.items():
        if life is not None:
            by_band.setdefault(temperature_band(temps[c]), []).append(c)
    for band, cells in by_band.items():
        med = float(np.median([lives[c] for c in cells]))
        for c in cells:
            out[c] = 2 * band + (1 if lives[c] <= med else 2)
    return out


def label_dataset(histories, life_cfg: LifeLabelConfig = LifeLabelConfig(),
                  knee_cfg: KneeConfig = KneeConfig()) -> DatasetLabels:
    """Life, knee and pattern labels for a dataset, with the reason each
    excluded cell was dropped. Cells shorter than ``min_cycles`` get no labels."""
    life, knee, excluded, temps = {}, {}, {}, {}
    for h in histories:
        cid = h.cell_id
        temps[cid] = h.params.temperature
        n = len(h.cycles)
        if n < max(life_cfg.min_cycles, life_cfg.nominal_window):
            life[cid] = None
            knee[cid] = None
            excluded[cid] = f"short history ({n} < {life_cfg.min_cycles} cycles)"
            continue
        lab = cycle_life(h, life_cfg)
        life[cid] = lab.life
        if lab.censored:
            excluded[cid] = "censored (never reached end of life)"
        knee[cid] = int(knee_label(h, knee_cfg).knee) if n >= 2 * knee_cfg.interval else None
    return DatasetLabels(life, knee, pattern_labels(temps, life), excluded)
