"""Speed traces and the longitudinal vehicle model that turns them into power."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass
class SpeedTrace:
    time: np.ndarray   # s
    speed: np.ndarray  # m/s

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.speed = np.asarray(self.speed, dtype=float)
        if self.time.shape != self.speed.shape or self.time.ndim != 1:
            raise ValueError("time and speed must be 1-D arrays of equal length")
        if len(self.time) == 0:
            raise ValueError("empty speed trace")
        if np.any(np.diff(self.time) <= 0):
            raise ValueError("speed trace time must be strictly increasing")
        if np.any(self.speed < 0):
            raise ValueError("speed must be non-negative")


@dataclass
class PowerTrace:
    time: np.ndarray   # s
    power: np.ndarray  # W

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.power = np.asarray(self.power, dtype=float)
        if self.time.shape != self.power.shape or self.time.ndim != 1:
            raise ValueError("time and power must be 1-D arrays of equal length")
        if len(self.time) > 1 and np.any(np.diff(self.time) <= 0):
            raise ValueError("power trace time must be strictly increasing")

    def __len__(self) -> int:
        return len(self.power)


@dataclass(frozen=True)
class VehicleParams:
    """Compact-EV defaults (roughly Nissan-Leaf sized)."""

    mass: float = 1500.0          # kg
    cda: float = 0.7              # drag coefficient x frontal area, m^2
    air_density: float = 1.2      # kg/m^3
    rolling_coeff: float = 0.01
    efficiency: float = 0.9       # drivetrain, (0, 1]
    gravity: float = 9.81         # m/s^2

    def __post_init__(self):
        for name in ("mass", "cda", "air_density", "rolling_coeff", "efficiency", "gravity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.efficiency > 1:
            raise ValueError("efficiency must be <= 1")


def speed_to_power(trace: SpeedTrace, params: VehicleParams = VehicleParams()) -> PowerTrace:
    """Traction power at the battery; regenerative (negative) power is clipped to 0."""
    v = trace.speed
    if len(v) > 1:
        accel = np.gradient(v, trace.time)
    else:
        accel = np.zeros_like(v)
    force = (params.mass * accel
             + 0.5 * params.air_density * params.cda * v**2
             + params.rolling_coeff * params.mass * params.gravity)
    power = np.maximum(0.0, v * force / params.efficiency)
    return PowerTrace(trace.time.copy(), power)


def scale_power(trace: PowerTrace, target_mean: float) -> PowerTrace:
    """Rescale vehicle power to cell level so the trace mean equals ``target_mean``."""
    mean = float(np.mean(trace.power))
    if mean <= 0:
        return PowerTrace(trace.time.copy(), trace.power.copy())
    return PowerTrace(trace.time.copy(), trace.power * (target_mean / mean))


def read_speed_csv(path) -> SpeedTrace:
    """Read a ``time_s,speed_mps`` CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"time_s", "speed_mps"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header time_s,speed_mps")
        rows = [(float(r["time_s"]), float(r["speed_mps"])) for r in reader]
    if not rows:
        raise ValueError(f"{path}: empty speed trace")
    t, v = zip(*rows)
    return SpeedTrace(np.array(t), np.array(v))


def write_speed_csv(path, trace: SpeedTrace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "speed_mps"])
        for t, v in zip(trace.time, trace.speed):
            w.writerow([repr(float(t)), repr(float(v))])


def synthetic_drive_cycle(duration: float = 3600.0, seed: int = 0) -> SpeedTrace:
    """Aggressive highway-style speed trace sampled at 1 Hz.

    Stand-in for a measured schedule when none is supplied: cruise segments at
    random target speeds with hard accelerations, occasional full stops and
    short idle periods.
    """
    rng = np.random.default_rng(seed)
    n = int(duration) + 1
    speed = np.zeros(n)
    v = 0.0
    i = 0
    while i < n:
        if rng.random() < 0.2:
            target, hold = 0.0, int(rng.integers(10, 40))
        else:
            target, hold = float(rng.uniform(8.0, 36.0)), int(rng.integers(20, 90))
        accel = float(rng.uniform(1.5, 3.5))
        decel = float(rng.uniform(2.0, 4.0))
        while i < n and abs(v - target) > 0.5:
            v = min(target, v + accel) if target > v else max(target, v - decel)
            speed[i] = v
            i += 1
        for _ in range(hold):
            if i >= n:
                break
            if target > 0:
                v = max(0.0, v + 0.3 * (target - v) + float(rng.normal(0.0, 0.6)))
            else:
                v = 0.0
            speed[i] = v
            i += 1
    return SpeedTrace(np.arange(n, dtype=float), speed)


def load_vehicle_params(path=None) -> VehicleParams:
    """Vehicle constants from a TOML file; the bundled default when ``path`` is None."""
    from ..config import load_toml
    if path is None:
        from importlib import resources
        path = resources.files("batdeg") / "data" / "vehicle_default.toml"
    obj = load_toml(path)
    known = set(VehicleParams.__dataclass_fields__)
    unknown = set(obj) - known
    if unknown:
        raise ValueError(f"{path}: unknown vehicle keys {sorted(unknown)}")
    return VehicleParams(**{k: float(v) for k, v in obj.items()})
