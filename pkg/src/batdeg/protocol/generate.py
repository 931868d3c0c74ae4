"""Randomized discharge protocols sampled from a fitted HMM."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hmm import GaussianHmm, sample_states
from .vehicle import PowerTrace

POWER_CAP = 16.0          # W, tester output limit
ZERO_KEEP_RATIO = 0.25    # fraction of each idle run that is kept
POWER_RESOLUTION = 0.01   # W, steps closer than this are merged


@dataclass(frozen=True)
class ProtocolSpec:
    steps: tuple          # ((duration_s, power_w), ...)
    protocol_id: str
    seed: int
    n_cycles: int = 1     # cycles one scheduler spec file asks the cycler to run

    def __post_init__(self):
        steps = tuple((float(d), float(p)) for d, p in self.steps)
        object.__setattr__(self, "steps", steps)
        for d, p in steps:
            if d <= 0:
                raise ValueError(f"protocol {self.protocol_id}: non-positive step duration {d}")
            if p < 0:
                raise ValueError(f"protocol {self.protocol_id}: negative power {p}")
        if self.n_cycles < 1:
            raise ValueError("n_cycles must be >= 1")

    @property
    def duration(self) -> float:
        return sum(d for d, _ in self.steps)

    @property
    def mean_power(self) -> float:
        if not self.steps:
            return 0.0
        return sum(d * p for d, p in self.steps) / self.duration

    def to_json(self) -> dict:
        obj = {
            "protocol_id": self.protocol_id,
            "seed": self.seed,
            "steps": [{"duration_s": d, "power_w": p} for d, p in self.steps],
        }
        if self.n_cycles != 1:
            obj["n_cycles"] = self.n_cycles
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ProtocolSpec":
        steps = tuple((s["duration_s"], s["power_w"]) for s in obj["steps"])
        return cls(steps, str(obj["protocol_id"]), int(obj["seed"]), int(obj.get("n_cycles", 1)))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "ProtocolSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def constant_protocol(power: float, duration: float, protocol_id: str = "constant") -> ProtocolSpec:
    return ProtocolSpec(((duration, power),), protocol_id, 0)


def sample_protocol(model: GaussianHmm, duration: float, step: float, seed: int = 0) -> PowerTrace:
    """Sample one power value per ``step`` seconds until ``duration``."""
    if duration <= 0 or step <= 0:
        raise ValueError("duration and step must be positive")
    n = max(1, math.ceil(duration / step))
    _, obs = sample_states(model, n, seed)
    return PowerTrace(np.arange(n) * float(step), obs)


def _protocol_id(steps, seed) -> str:
    h = hashlib.sha1(json.dumps([seed, steps]).encode()).hexdigest()[:12]
    return f"p{seed}-{h}"


def postprocess(trace: PowerTrace, cap: float = POWER_CAP, zero_keep_ratio: float = ZERO_KEEP_RATIO,
                seed: int = 0, protocol_id: str | None = None) -> ProtocolSpec:
    """Clip to [0, cap], shorten idle runs, merge equal neighbours into steps.

    Each maximal run of zero-power samples keeps its first
    ``ceil(zero_keep_ratio * run_length)`` samples. Powers are rounded to
    ``POWER_RESOLUTION`` before merging.
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    if not 0 < zero_keep_ratio <= 1:
        raise ValueError("zero_keep_ratio must lie in (0, 1]")
    p = np.round(np.clip(trace.power, 0.0, cap), 2)
    p = np.minimum(p, cap)
    t = trace.time
    if len(t) > 1:
        dur = np.diff(t)
        dur = np.append(dur, dur[-1])
    else:
        dur = np.ones(len(t))

    keep = np.ones(len(p), dtype=bool)
    i = 0
    while i < len(p):
        if p[i] == 0:
            j = i
            while j < len(p) and p[j] == 0:
                j += 1
            run = j - i
            keep[i + math.ceil(zero_keep_ratio * run): j] = False
            i = j
        else:
            i += 1
    p, dur = p[keep], dur[keep]

    steps: list[tuple[float, float]] = []
    for d, w in zip(dur.tolist(), p.tolist()):
        if steps and steps[-1][1] == w:
            steps[-1] = (steps[-1][0] + d, w)
        else:
            steps.append((d, w))
    pid = protocol_id or _protocol_id(steps, seed)
    return ProtocolSpec(tuple(steps), pid, seed)


def generate_protocol(model: GaussianHmm, seed: int, duration: float = 10800.0, step: float = 140.0,
                      cap: float = POWER_CAP, zero_keep_ratio: float = ZERO_KEEP_RATIO) -> ProtocolSpec:
    """Sample and post-process one discharge protocol."""
    return postprocess(sample_protocol(model, duration, step, seed), cap, zero_keep_ratio, seed)


def write_protocols(specs, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, spec in enumerate(specs):
        path = directory / f"{i:05d}_{spec.protocol_id}.json"
        spec.save(path)
        paths.append(path)
    return paths
