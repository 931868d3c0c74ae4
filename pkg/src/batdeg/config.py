"""Run configuration: a TOML file with the sections [protocol], [fleet],
[features], [tasks], [scheduler] and [paths].

Every key is optional and falls back to the defaults below; unknown sections
or keys are rejected. Paths (and only paths) may also be overridden from the
environment with ``BATDEG_PATH_<KEY>``, e.g. ``BATDEG_PATH_WORKDIR=/tmp/run``.

Example::

    [protocol]
    n_states = 8
    cap = 16.0

    [fleet]
    n_cells = 40
    temperatures = [-10, 10, 25, 45, 70]

    [fleet.per_temperature."-10"]
    low_temp_penalty = 0.03

    [features]
    K = 7
    D = 4

    [tasks]
    seeds = 16
    knee_mode = "max_slope_change"
"""
from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_PREFIX = "BATDEG_PATH_"


class ConfigError(ValueError):
    pass


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class ProtocolSection:
    n_states: int = 8
    cap: float = 16.0
    zero_keep_ratio: float = 0.25
    seed: int = 0
    duration: float = 21600.0       # s of sampled protocol per discharge
    step: float = 140.0             # s per sampled power value
    mean_power: float = 7.0         # W, cell-level mean of the training trace
    max_iter: int = 200
    tol: float = 1e-4
    speed_trace: str = ""           # time_s,speed_mps CSV; empty = built-in synthetic drive cycle
    vehicle: str = ""               # vehicle TOML; empty = bundled default

    def check(self):
        if self.n_states < 1:
            raise ConfigError("protocol.n_states must be >= 1")
        if self.cap <= 0:
            raise ConfigError("protocol.cap must be positive")
        if not 0 < self.zero_keep_ratio <= 1:
            raise ConfigError("protocol.zero_keep_ratio must lie in (0, 1]")
        if self.duration <= 0 or self.step <= 0:
            raise ConfigError("protocol.duration and protocol.step must be positive")


@dataclass(frozen=True)
class FleetSection:
    n_cells: int = 40
    temperatures: tuple = (-10.0, 0.0, 10.0, 25.0, 40.0, 55.0, 70.0)
    knee_fraction: float = 0.0
    seed: int = 0
    fade_per_cycle: float = 1e-3
    fade_sd: float = 0.1
    usage_range: tuple = (0.7, 1.3)
    r0: float = 0.05
    r_growth: float = 0.01
    knee_cycle_range: tuple = (90, 140)
    knee_fade_multiplier: float = 6.0
    max_cycles: int = 600
    keep_traces: int = 50
    dt: float = 5.0
    per_temperature: dict = field(default_factory=dict)   # "25" -> {cell parameter: value}

    def check(self):
        if self.n_cells < 1:
            raise ConfigError("fleet.n_cells must be >= 1")
        if not self.temperatures:
            raise ConfigError("fleet.temperatures must not be empty")
        if not 0 <= self.knee_fraction <= 1:
            raise ConfigError("fleet.knee_fraction must lie in [0, 1]")
        from .cell.records import CellParams
        allowed = set(CellParams.__dataclass_fields__) - {"temperature", "seed"}
        for t, over in self.per_temperature.items():
            try:
                float(t)
            except ValueError:
                raise ConfigError(f"fleet.per_temperature: {t!r} is not a temperature") from None
            bad = set(over) - allowed
            if bad:
                raise ConfigError(f"fleet.per_temperature.{t}: unknown cell parameters {sorted(bad)}")

    def fleet_config(self):
        from .pipeline.fleet import FleetConfig
        overrides = {float(t): dict(v) for t, v in self.per_temperature.items()}
        return FleetConfig(
            n_cells=self.n_cells, temperatures=tuple(float(t) for t in self.temperatures),
            knee_fraction=self.knee_fraction, seed=self.seed, fade_per_cycle=self.fade_per_cycle,
            fade_sd=self.fade_sd, usage_range=tuple(self.usage_range), r0=self.r0, r_growth=self.r_growth,
            knee_cycle_range=tuple(self.knee_cycle_range), knee_fade_multiplier=self.knee_fade_multiplier,
            max_cycles=self.max_cycles, keep_traces=self.keep_traces, dt=self.dt,
            cell_overrides=overrides)


@dataclass(frozen=True)
class FeaturesSection:
    K: int = 7
    D: int = 4
    N: int = 50
    grid_len: int = 100
    signals: tuple = ("VQ", "QV", "dVdQ", "I", "V", "E", "W")
    directions: tuple = ("d", "c")

    def check(self):
        if self.K < 1 or self.D < 1:
            raise ConfigError("features.K and features.D must be >= 1")
        if self.N < self.K:
            raise ConfigError(f"features.N={self.N} must be >= K={self.K}")
        if self.grid_len < 2:
            raise ConfigError("features.grid_len must be >= 2")

    def space(self):
        from .features.dsl import SpaceConfig
        return SpaceConfig(K=self.K, D=self.D, N=self.N, signals=tuple(self.signals),
                           directions=tuple(self.directions))


@dataclass(frozen=True)
class TasksSection:
    seeds: int = 16
    seed_start: int = 0
    train_fraction: float = 0.6
    n_trees: int = 300
    max_features: str = ""           # "" = task default; "sqrt" | "third" | "all"
    min_samples_leaf: int = 1
    knee_mode: str = "max_slope_change"
    knee_threshold: float = 5e-4
    knee_interval: int = 50
    eol_fraction: float = 0.8
    nominal_window: int = 5
    min_cycles: int = 50
    dq_cycles: tuple = (10, 50)
    ridge_alpha: float = 1.0
    top_features: int = 20
    xps_k: int = 8

    def check(self):
        if self.seeds < 1:
            raise ConfigError("tasks.seeds must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("tasks.train_fraction must lie in (0, 1)")
        if self.knee_mode not in ("max_slope", "max_slope_change"):
            raise ConfigError(f"tasks.knee_mode must be max_slope or max_slope_change, got {self.knee_mode!r}")
        if self.knee_threshold <= 0 or self.knee_interval < 2:
            raise ConfigError("tasks.knee_threshold must be positive and knee_interval >= 2")
        if not 0 < self.eol_fraction < 1:
            raise ConfigError("tasks.eol_fraction must lie in (0, 1)")
        if self.max_features not in ("", "sqrt", "third", "all"):
            raise ConfigError(f"tasks.max_features: unknown rule {self.max_features!r}")
        if len(self.dq_cycles) != 2 or min(self.dq_cycles) < 1:
            raise ConfigError("tasks.dq_cycles must be two 1-based cycle indices")

    def task_config(self, n_trees: int | None = None):
        from .pipeline.tasks import TaskConfig
        return TaskConfig(seeds=tuple(range(self.seed_start, self.seed_start + self.seeds)),
                          train_fraction=self.train_fraction, n_trees=n_trees or self.n_trees,
                          max_features=self.max_features or None, min_samples_leaf=self.min_samples_leaf,
                          ridge_alpha=self.ridge_alpha, top_features=self.top_features)

    def life_config(self):
        from .pipeline.labels import LifeLabelConfig
        return LifeLabelConfig(self.nominal_window, self.eol_fraction, min_cycles=self.min_cycles)

    def knee_config(self):
        from .pipeline.labels import KneeConfig
        return KneeConfig(self.knee_interval, self.knee_threshold, self.knee_mode)


@dataclass(frozen=True)
class SchedulerSection:
    clock: str = "simulated"        # "simulated" | "wall"
    poll_interval: float = 1.0      # ticks
    tick_seconds: float = 1.0       # seconds of wall time per tick in wall mode
    ticks_per_cycle: float = 1.0
    resume: bool = True             # False restarts an interrupted spec from its first cycle
    default_cycles: int = 1

    def check(self):
        if self.clock not in ("simulated", "wall"):
            raise ConfigError("scheduler.clock must be simulated or wall")
        if self.poll_interval <= 0 or self.tick_seconds <= 0 or self.ticks_per_cycle <= 0:
            raise ConfigError("scheduler intervals must be positive")


@dataclass(frozen=True)
class PathsSection:
    workdir: str = "run"
    protocols: str = ""        # each empty path resolves to a default under workdir
    dataset: str = ""
    features: str = ""
    labels: str = ""
    reports: str = ""
    campaign: str = ""
    xps: str = ""              # composition CSV; empty = bundled fixture

    def check(self):
        if not self.workdir:
            raise ConfigError("paths.workdir must not be empty")

    def resolve(self, name: str) -> Path:
        value = getattr(self, name)
        if value:
            return Path(value)
        defaults = {"protocols": "protocols", "dataset": "dataset", "features": "features.csv",
                    "labels": "labels.json", "reports": "reports", "campaign": "campaign"}
        if name == "workdir":
            return Path(self.workdir)
        if name not in defaults:
            raise KeyError(name)
        return Path(self.workdir) / defaults[name]


SECTIONS = {
    "protocol": ProtocolSection,
    "fleet": FleetSection,
    "features": FeaturesSection,
    "tasks": TasksSection,
    "scheduler": SchedulerSection,
    "paths": PathsSection,
}


@dataclass(frozen=True)
class RunConfig:
    protocol: ProtocolSection = ProtocolSection()
    fleet: FleetSection = FleetSection()
    features: FeaturesSection = FeaturesSection()
    tasks: TasksSection = TasksSection()
    scheduler: SchedulerSection = SchedulerSection()
    paths: PathsSection = PathsSection()

    def validate(self) -> "RunConfig":
        for name in SECTIONS:
            getattr(self, name).check()
        return self

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, protocol=replace(self.protocol, seed=seed),
                       fleet=replace(self.fleet, seed=seed),
                       tasks=replace(self.tasks, seed_start=seed))

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            sec = asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
        return out


def _section(cls, name: str, raw, source) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: [{name}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) in [{name}]: {', '.join(unknown)}")
    default = cls()
    kw = {}
    for key, value in raw.items():
        ref = getattr(default, key)
        if isinstance(ref, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{source}: {name}.{key} must be a list")
            value = tuple(value)
        elif isinstance(ref, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{source}: {name}.{key} must be true or false")
        elif isinstance(ref, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{source}: {name}.{key} must be an integer")
        elif isinstance(ref, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{source}: {name}.{key} must be a number")
            value = float(value)
        elif isinstance(ref, str):
            if not isinstance(value, str):
                raise ConfigError(f"{source}: {name}.{key} must be a string")
        elif isinstance(ref, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{source}: {name}.{key} must be a table")
        kw[key] = value
    return cls(**kw)


def config_from_dict(raw: dict, source="<config>", environ=None) -> RunConfig:
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"{source}: unknown section(s): {', '.join(unknown)}")
    sections = {name: _section(cls, name, raw.get(name, {}), source) for name, cls in SECTIONS.items()}
    env = os.environ if environ is None else environ
    path_over = {}
    for key in (f.name for f in fields(PathsSection)):
        v = env.get(ENV_PREFIX + key.upper())
        if v:
            path_over[key] = v
    if path_over:
        sections["paths"] = replace(sections["paths"], **path_over)
    try:
        return RunConfig(**sections).validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path=None, environ=None) -> RunConfig:
    """Defaults, then the TOML file (if any), then path overrides from the environment."""
    raw = load_toml(path) if path is not None else {}
    return config_from_dict(raw, path or "<defaults>", environ)
