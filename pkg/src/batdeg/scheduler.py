"""Batch-testing campaigns: one monitor per cycler channel, one master.

Monitors poll their channel's cycler and report to the master through a
message inbox; the master alone assigns specs, appends to the campaign log
and writes the checkpoint. A checkpoint is written after every polling
round, always to a temporary file that then replaces the old one, so a
reader sees either the previous or the new state and never a partial file.

Two clocks are supported. The simulated clock (default) steps every
monitor cooperatively on a single thread, tick by tick, which makes crash
tests deterministic. Wall-clock mode runs each monitor on its own thread.

Exactly-once completion: a spec's summary enters the checkpoint before it is
appended to the log, and recovery rewrites the log from the checkpoint. A
spec that finished but was not yet checkpointed when the process died is
resumed (or restarted) and completes once after recovery.
"""
from __future__ import annotations

import json
import os
import queue
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .protocol.generate import ProtocolSpec

SCHEMA_VERSION = 1
CRASH_POINTS = ("after_poll", "after_checkpoint_temp", "after_checkpoint", "after_log")


class BackendError(RuntimeError):
    """A cycler channel stopped responding or reported a fault."""


class CheckpointError(ValueError):
    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


class SimulatedCrash(RuntimeError):
    """Raised by crash injection; the campaign object must be discarded."""


@dataclass(frozen=True)
class QueuedSpec:
    spec_id: str
    n_cycles: int
    path: str | None = None


@dataclass(frozen=True)
class PollStatus:
    spec_id: str
    cycles_completed: int
    done: bool


@dataclass(frozen=True)
class RunSummary:
    channel: str
    spec_id: str
    cycles: int
    start_tick: float
    end_tick: float
    wall_time_s: float
    status: str              # "completed" | "failed"
    resumed_from: int = 0
    message: str = ""

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "RunSummary":
        return cls(**obj)


@dataclass(frozen=True)
class _Progress:
    channel: str
    status: PollStatus


@dataclass(frozen=True)
class _Failure:
    channel: str
    spec_id: str
    cycles: int
    message: str


class CyclerBackend(Protocol):
    def start(self, spec: QueuedSpec, resume_at: int = 0) -> None: ...
    def poll(self) -> PollStatus: ...
    def stop(self) -> None: ...


class SimClock:
    """Discrete clock; one tick is ``tick_seconds`` of simulated time."""

    def __init__(self, start: float = 0, tick_seconds: float = 1.0):
        self.now = start
        self.tick_seconds = tick_seconds

    def advance(self, ticks: float = 1) -> None:
        self.now += ticks


class WallClock:
    def __init__(self, tick_seconds: float = 1.0):
        self._t0 = time.monotonic()
        self.tick_seconds = tick_seconds

    @property
    def now(self) -> float:
        return (time.monotonic() - self._t0) / self.tick_seconds


class VirtualCycler:
    """Cycler stand-in: a spec runs one cycle per ``ticks_per_cycle`` of the clock.

    ``resume_at`` starts the queued protocol with that many cycles already done.
    ``fail_at`` makes every poll from that clock time on raise BackendError.
    """

    def __init__(self, clock, ticks_per_cycle: float = 1.0, fail_at: float | None = None):
        self.clock = clock
        self.ticks_per_cycle = ticks_per_cycle
        self.fail_at = fail_at
        self._spec: QueuedSpec | None = None
        self._start = 0.0
        self._resume = 0
        self._last = 0

    def start(self, spec: QueuedSpec, resume_at: int = 0) -> None:
        if not 0 <= resume_at <= spec.n_cycles:
            raise ValueError(f"resume_at {resume_at} outside [0, {spec.n_cycles}]")
        self._spec = spec
        self._start = self.clock.now
        self._resume = resume_at
        self._last = resume_at

    def poll(self) -> PollStatus:
        if self._spec is None:
            raise BackendError("poll with no spec running")
        if self.fail_at is not None and self.clock.now >= self.fail_at:
            raise BackendError(f"channel fault at t={self.clock.now}")
        ran = int((self.clock.now - self._start) // self.ticks_per_cycle)
        # cycles never go backwards and done is sticky
        self._last = max(self._last, min(self._spec.n_cycles, self._resume + ran))
        return PollStatus(self._spec.spec_id, self._last, self._last >= self._spec.n_cycles)

    def stop(self) -> None:
        self._spec = None


def load_spec_queue(directory, default_cycles: int = 1) -> list[QueuedSpec]:
    """Protocol JSON files of a directory in lexicographic file-name order;
    each file stem becomes a spec id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"spec queue {directory} is not a directory")
    out = []
    for p in sorted(directory.glob("*.json"), key=lambda p: p.name):
        try:
            with open(p, encoding="utf-8") as fh:
                obj = json.load(fh)
            spec = ProtocolSpec.from_json(obj)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"{p}: not a protocol spec ({exc})") from exc
        n = spec.n_cycles if "n_cycles" in obj else default_cycles
        out.append(QueuedSpec(p.stem, n, str(p)))
    return out


def load_campaign_queues(root, default_cycles: int = 1) -> dict[str, list[QueuedSpec]]:
    """One queue per sub-directory of ``root``, keyed by the sub-directory name."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"campaign directory {root} does not exist")
    return {d.name: load_spec_queue(d, default_cycles) for d in sorted(root.iterdir()) if d.is_dir()}


def atomic_write_json(path, obj) -> None:
    """Write to a temporary file in the same directory, flush it to disk, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=1, sort_keys=True)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class ChannelState:
    current: str | None = None
    cycles_completed: int = 0
    completed: list = field(default_factory=list)
    failed: bool = False

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Checkpoint:
    tick: float
    channels: dict                     # channel -> ChannelState
    summaries: list                    # RunSummary, in completion order
    written_at: str = ""

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "written_at": self.written_at,
            "tick": self.tick,
            "channels": {c: s.to_json() for c, s in sorted(self.channels.items())},
            "summaries": [s.to_json() for s in self.summaries],
        }


def read_checkpoint(path) -> Checkpoint | None:
    """Load a checkpoint; None when the file does not exist. Anything
    unreadable or inconsistent raises CheckpointError naming the file."""
    path = Path(path)
    if not path.exists():
        return None
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(path, f"unreadable checkpoint ({exc})") from exc
    if not isinstance(obj, dict):
        raise CheckpointError(path, "checkpoint is not a JSON object")
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(path, f"unsupported schema_version {obj.get('schema_version')!r}")
    try:
        channels = {c: ChannelState(s["current"], int(s["cycles_completed"]), list(s["completed"]),
                                    bool(s["failed"]))
                    for c, s in obj["channels"].items()}
        summaries = [RunSummary.from_json(s) for s in obj["summaries"]]
        return Checkpoint(obj["tick"], channels, summaries, obj.get("written_at", ""))
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CheckpointError(path, f"malformed checkpoint ({exc!r})") from exc


class _Monitor:
    """Watches one spec on one channel; only ever talks to the master's inbox."""

    def __init__(self, channel: str, backend, spec: QueuedSpec, inbox, resume_at: int):
        self.channel = channel
        self.backend = backend
        self.spec = spec
        self.inbox = inbox
        self.finished = False
        backend.start(spec, resume_at)

    def poll_once(self) -> None:
        try:
            st = self.backend.poll()
        except BackendError as exc:
            self.finished = True
            self.inbox.put(_Failure(self.channel, self.spec.spec_id, -1, str(exc)))
            return
        self.inbox.put(_Progress(self.channel, st))
        if st.done:
            self.finished = True
            self.backend.stop()


@dataclass
class CampaignResult:
    summaries: list
    checkpoint: Checkpoint
    ticks: float
    failed_channels: list

    def completed_specs(self) -> list[tuple[str, str]]:
        return [(s.channel, s.spec_id) for s in self.summaries if s.status == "completed"]


class Campaign:
    """A set of channel queues run to completion against cycler backends.

    ``backend_factory(channel, clock)`` builds one backend per channel.
    ``resume=False`` restarts an interrupted spec from cycle 0 instead of
    resuming at its checkpointed cycle count. ``crash_at=(tick, point)``
    raises SimulatedCrash at that tick and point (see CRASH_POINTS).
    """

    def __init__(self, queues: dict, backend_factory: Callable, checkpoint_path, log_path=None,
                 poll_interval: float = 1, clock=None, resume: bool = True,
                 crash_at: tuple | None = None):
        if poll_interval <= 0:
            raise ValueError("poll_interval must be positive")
        if crash_at is not None and crash_at[1] not in CRASH_POINTS:
            raise ValueError(f"unknown crash point {crash_at[1]!r}")
        self.queues = {c: list(q) for c, q in sorted(queues.items())}
        for c, q in self.queues.items():
            ids = [s.spec_id for s in q]
            if len(set(ids)) != len(ids):
                raise ValueError(f"channel {c}: duplicate spec ids in queue")
        self.clock = clock or SimClock()
        self.backends = {c: backend_factory(c, self.clock) for c in self.queues}
        self.checkpoint_path = Path(checkpoint_path)
        self.log_path = Path(log_path) if log_path is not None else None
        self.poll_interval = poll_interval
        self.resume = resume
        self.crash_at = crash_at
        self.inbox: queue.Queue = queue.Queue()
        self.state = {c: ChannelState() for c in self.queues}
        self.summaries: list[RunSummary] = []
        self.monitors: dict[str, _Monitor] = {}
        self._started: dict[str, tuple] = {}     # channel -> (start_tick, resumed_from)
        self._next_poll: dict[str, float] = {}

    # -- recovery ---------------------------------------------------------
    def restore(self) -> bool:
        """Load the checkpoint if there is one; returns whether state was restored."""
        cp = read_checkpoint(self.checkpoint_path)
        if cp is None:
            return False
        for c in cp.channels:
            if c not in self.queues:
                raise CheckpointError(self.checkpoint_path, f"unknown channel {c!r}")
        for c, st in cp.channels.items():
            ids = [s.spec_id for s in self.queues[c]]
            if st.completed != ids[:len(st.completed)]:
                raise CheckpointError(self.checkpoint_path,
                                      f"channel {c}: completed specs are not a prefix of the queue")
            if st.current is not None and (len(st.completed) >= len(ids) or ids[len(st.completed)] != st.current):
                raise CheckpointError(self.checkpoint_path,
                                      f"channel {c}: in-flight spec {st.current!r} is not next in the queue")
        self.state.update(cp.channels)
        self.summaries = list(cp.summaries)
        if isinstance(self.clock, SimClock):
            self.clock.now = cp.tick
        self._reconcile_log()
        return True

    def _reconcile_log(self) -> None:
        """Make the log hold exactly the checkpointed summaries, keeping lines already written."""
        if self.log_path is None:
            return
        want = [(s.channel, s.spec_id) for s in self.summaries]
        kept: dict = {}
        if self.log_path.exists():
            with open(self.log_path, encoding="utf-8") as fh:
                for line in fh:
                    try:
                        obj = json.loads(line)
                        key = (obj["channel"], obj["spec_id"])
                    except (json.JSONDecodeError, KeyError, TypeError):
                        continue        # a torn last line from the crash
                    kept.setdefault(key, line if line.endswith("\n") else line + "\n")
        lines = [kept.get(k) or json.dumps(s.to_json(), sort_keys=True) + "\n"
                 for k, s in zip(want, self.summaries)]
        tmp = self.log_path.with_name(self.log_path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.writelines(lines)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.log_path)

    # -- master -----------------------------------------------------------
    def _crash(self, point: str) -> None:
        if self.crash_at is not None and self.crash_at[1] == point and self.clock.now >= self.crash_at[0]:
            raise SimulatedCrash(f"injected crash at t={self.clock.now} ({point})")

    def _write_checkpoint(self) -> None:
        cp = Checkpoint(self.clock.now, self.state, self.summaries,
                        time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()))
        if self.crash_at is not None and self.crash_at[1] == "after_checkpoint_temp" \
                and self.clock.now >= self.crash_at[0]:
            # leave a fully written temp file behind without renaming it
            fd, _ = tempfile.mkstemp(dir=self.checkpoint_path.parent,
                                     prefix=f".{self.checkpoint_path.name}.", suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(cp.to_json(), fh)
            self._crash("after_checkpoint_temp")
        atomic_write_json(self.checkpoint_path, cp.to_json())

    def _append_log(self, summary: RunSummary) -> None:
        if self.log_path is None:
            return
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(summary.to_json(), sort_keys=True) + "\n")
            fh.flush()

    def _launch(self, channel: str) -> None:
        """Start the next spec of a channel, resuming an interrupted one."""
        st = self.state[channel]
        q = self.queues[channel]
        if st.failed or channel in self.monitors:
            return
        done = len(st.completed)
        if done >= len(q):
            return
        spec = q[done]
        resume_at = st.cycles_completed if (st.current == spec.spec_id and self.resume) else 0
        st.current = spec.spec_id
        st.cycles_completed = resume_at
        self.monitors[channel] = _Monitor(channel, self.backends[channel], spec, self.inbox, resume_at)
        self._started[channel] = (self.clock.now, resume_at)
        self._next_poll[channel] = self.clock.now + self.poll_interval

    def _handle(self, msg, new: list) -> None:
        c = msg.channel
        st = self.state[c]
        start, resumed = self._started.get(c, (self.clock.now, 0))
        if isinstance(msg, _Failure):
            st.failed = True
            self.monitors.pop(c, None)
            s = RunSummary(c, msg.spec_id, st.cycles_completed, start, self.clock.now,
                           (self.clock.now - start) * self.clock.tick_seconds, "failed", resumed, msg.message)
            self.summaries.append(s)
            new.append(s)
            return
        status = msg.status
        st.cycles_completed = status.cycles_completed
        if status.done:
            self.monitors.pop(c, None)
            st.completed.append(status.spec_id)
            st.current = None
            st.cycles_completed = 0
            s = RunSummary(c, status.spec_id, status.cycles_completed, start, self.clock.now,
                           (self.clock.now - start) * self.clock.tick_seconds, "completed", resumed)
            self.summaries.append(s)
            new.append(s)

    def _drain(self) -> list[RunSummary]:
        new: list[RunSummary] = []
        while True:
            try:
                msg = self.inbox.get_nowait()
            except queue.Empty:
                return new
            self._handle(msg, new)

    def _commit(self, new: list[RunSummary]) -> None:
        """Checkpoint first, then log, then hand freed channels their next spec."""
        self._write_checkpoint()
        self._crash("after_checkpoint")
        for s in new:
            self._append_log(s)
        if new:
            self._crash("after_log")

    def _finished(self) -> bool:
        return not self.monitors and all(
            st.failed or len(st.completed) >= len(self.queues[c]) for c, st in self.state.items())

    def run(self, max_ticks: float | None = None) -> CampaignResult:
        """Run on the simulated clock with cooperative stepping."""
        if not isinstance(self.clock, SimClock):
            return self.run_threaded()
        limit = None if max_ticks is None else self.clock.now + max_ticks
        for c in self.queues:
            self._launch(c)
        self._commit([])
        while not self._finished():
            if limit is not None and self.clock.now >= limit:
                break
            self.clock.advance(1)
            for c in sorted(self.monitors):
                if self.clock.now >= self._next_poll[c]:
                    self.monitors[c].poll_once()
                    self._next_poll[c] += self.poll_interval
            self._crash("after_poll")
            new = self._drain()
            for c in self.queues:
                self._launch(c)
            self._commit(new)
        return self._result()

    def run_threaded(self, timeout: float | None = None) -> CampaignResult:
        """Wall-clock mode: every monitor polls from its own thread."""
        stop = threading.Event()
        threads: dict[str, threading.Thread] = {}
        period = self.poll_interval * self.clock.tick_seconds

        def watch(mon: _Monitor):
            while not stop.is_set() and not mon.finished:
                if stop.wait(period):
                    break
                mon.poll_once()

        deadline = None if timeout is None else time.monotonic() + timeout
        try:
            while True:
                for c in self.queues:
                    if c not in self.monitors:
                        self._launch(c)
                        if c in self.monitors:
                            threads[c] = threading.Thread(target=watch, args=(self.monitors[c],), daemon=True)
                            threads[c].start()
                if self._finished():
                    break
                if deadline is not None and time.monotonic() > deadline:
                    break
                try:
                    msg = self.inbox.get(timeout=period)
                except queue.Empty:
                    continue
                new: list[RunSummary] = []
                self._handle(msg, new)
                new.extend(self._drain())
                self._commit(new)
        finally:
            stop.set()
            for t in threads.values():
                t.join(timeout=1.0)
        return self._result()

    def _result(self) -> CampaignResult:
        cp = Checkpoint(self.clock.now, self.state, self.summaries)
        return CampaignResult(list(self.summaries), cp, self.clock.now,
                              [c for c, st in self.state.items() if st.failed])


def virtual_backends(ticks_per_cycle: float = 1.0, fail_at: dict | None = None) -> Callable:
    """Backend factory for VirtualCycler channels; ``fail_at`` maps channel to fault time."""
    fail_at = fail_at or {}

    def make(channel, clock):
        return VirtualCycler(clock, ticks_per_cycle, fail_at.get(channel))
    return make


def run_campaign(channels, spec_queues: dict, poll_interval: float = 1, checkpoint_path=None,
                 log_path=None, backend_factory: Callable | None = None, **kw) -> CampaignResult:
    """Fresh campaign over ``channels``; any existing checkpoint is ignored and overwritten."""
    queues = {c: spec_queues.get(c, []) for c in channels}
    cp = checkpoint_path or Path(tempfile.mkdtemp(prefix="campaign-")) / "checkpoint.json"
    if log_path is not None and Path(log_path).exists():
        Path(log_path).unlink()
    camp = Campaign(queues, backend_factory or virtual_backends(), cp, log_path, poll_interval, **kw)
    return camp.run()


def recover(checkpoint_path, channels, spec_queues: dict, poll_interval: float = 1, log_path=None,
            backend_factory: Callable | None = None, **kw) -> CampaignResult:
    """Continue a campaign from its checkpoint (a fresh campaign when there is none)."""
    queues = {c: spec_queues.get(c, []) for c in channels}
    camp = Campaign(queues, backend_factory or virtual_backends(), checkpoint_path, log_path,
                    poll_interval, **kw)
    camp.restore()
    return camp.run()


def read_log(path) -> list[RunSummary]:
    with open(path, encoding="utf-8") as fh:
        return [RunSummary.from_json(json.loads(line)) for line in fh if line.strip()]
