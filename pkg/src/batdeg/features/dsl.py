"""Feature-expression grammar: AST, parser, canonical renderer and space enumeration.

A feature name looks like::

    identity(nanmax(Cycle(6/7))[nanvar(VQ_d(1/4))])
    abs(nanmean(Cycle(3/7) - Cycle(6/7))[nanmean(VQ_d(3/4))])

read inside out: take signal ``VQ_d``, keep segment 1 of 4, reduce it per cycle
with ``nanvar``; reduce those per-cycle values over cycle group 6 of 7 with
``nanmax`` (or subtract group c's reduction from group a's); apply the activator.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from itertools import combinations
from typing import Iterator, Sequence, Union

AGGREGATORS = ("nanmean", "nanmin", "nanmax", "nanvar", "nanskew", "nankurtosis")
ACTIVATORS = ("identity", "abs")
SIGNALS = ("VQ", "QV", "dVdQ", "I", "V", "E", "W")
DIRECTIONS = ("d", "c")  # discharge columns come first


class FeatureSyntaxError(ValueError):
    """Malformed feature text. ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, text: str, offset: int):
        self.text = text
        self.offset = offset
        super().__init__(f"{message} at byte {offset}: {text!r}")


class FeatureValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Single:
    a: int
    b: int

    def render(self) -> str:
        return f"Cycle({self.a}/{self.b})"

    @property
    def total(self) -> int:
        return self.b

    def validate(self) -> None:
        if not 1 <= self.a <= self.b:
            raise FeatureValidationError(f"cycle group {self.a}/{self.b} out of range")


@dataclass(frozen=True)
class Diff:
    a: int
    b: int
    c: int
    d: int

    def render(self) -> str:
        return f"Cycle({self.a}/{self.b}) - Cycle({self.c}/{self.d})"

    @property
    def total(self) -> int:
        return self.b

    def validate(self) -> None:
        if not (1 <= self.a <= self.b and 1 <= self.c <= self.d):
            raise FeatureValidationError(f"cycle groups {self.render()} out of range")
        if self.b != self.d:
            raise FeatureValidationError(f"{self.render()}: group totals differ")
        if not self.a < self.c:
            raise FeatureValidationError(f"{self.render()}: first group must precede second")


Selector = Union[Single, Diff]


@dataclass(frozen=True)
class FeatureExpr:
    activator: str
    outer: str
    selector: Selector
    inner: str
    signal: str
    direction: str
    seg: int
    seg_total: int

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.activator not in ACTIVATORS:
            raise FeatureValidationError(f"unknown activator {self.activator!r}")
        for agg in (self.outer, self.inner):
            if agg not in AGGREGATORS:
                raise FeatureValidationError(f"unknown aggregator {agg!r}")
        if self.signal not in SIGNALS:
            raise FeatureValidationError(f"unknown signal {self.signal!r}")
        if self.direction not in DIRECTIONS:
            raise FeatureValidationError(f"unknown direction {self.direction!r}")
        if not 1 <= self.seg <= self.seg_total:
            raise FeatureValidationError(f"segment {self.seg}/{self.seg_total} out of range")
        self.selector.validate()

    @property
    def signal_key(self) -> str:
        return f"{self.signal}_{self.direction}"

    @property
    def n_groups(self) -> int:
        return self.selector.total

    def render(self) -> str:
        return render(self)

    def __str__(self) -> str:
        return render(self)


def render(expr: FeatureExpr) -> str:
    return (
        f"{expr.activator}({expr.outer}({expr.selector.render()})"
        f"[{expr.inner}({expr.signal_key}({expr.seg}/{expr.seg_total}))])"
    )


_TOKEN = re.compile(r"\s*(?:(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<int>\d+)|(?P<punct>[()\[\]/\-]))")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                if text[pos:].strip() == "":
                    break
                pos += len(text[pos:]) - len(text[pos:].lstrip())
                raise FeatureSyntaxError("unexpected character", text, _byte(text, pos))
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start))
            pos = m.end()
        self.i = 0

    def _peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def _offset(self) -> int:
        tok = self._peek()
        return _byte(self.text, tok[2] if tok else len(self.text))

    def _next(self, kind: str, value: str | None = None) -> str:
        tok = self._peek()
        if tok is None or tok[0] != kind or (value is not None and tok[1] != value):
            want = repr(value) if value is not None else kind
            got = repr(tok[1]) if tok else "end of input"
            raise FeatureSyntaxError(f"expected {want}, got {got}", self.text, self._offset())
        self.i += 1
        return tok[1]

    def _name(self, allowed: Sequence[str], what: str) -> str:
        offset = self._offset()
        name = self._next("name")
        if name not in allowed:
            raise FeatureSyntaxError(f"unknown {what} {name!r}", self.text, offset)
        return name

    def _fraction(self) -> tuple[int, int]:
        a = int(self._next("int"))
        self._next("punct", "/")
        b = int(self._next("int"))
        return a, b

    def _cycle(self) -> tuple[int, int]:
        self._next("name", "Cycle")
        self._next("punct", "(")
        frac = self._fraction()
        self._next("punct", ")")
        return frac

    def _signal(self) -> tuple[str, str]:
        offset = self._offset()
        name = self._next("name")
        sig, _, direction = name.rpartition("_")
        if sig not in SIGNALS or direction not in DIRECTIONS:
            raise FeatureSyntaxError(f"unknown signal {name!r}", self.text, offset)
        return sig, direction

    def parse(self) -> FeatureExpr:
        act = self._name(ACTIVATORS, "activator")
        self._next("punct", "(")
        outer = self._name(AGGREGATORS, "aggregator")
        self._next("punct", "(")
        a, b = self._cycle()
        tok = self._peek()
        if tok is not None and tok[:2] == ("punct", "-"):
            self.i += 1
            c, d = self._cycle()
            selector: Selector = Diff(a, b, c, d)
        else:
            selector = Single(a, b)
        self._next("punct", ")")
        self._next("punct", "[")
        inner = self._name(AGGREGATORS, "aggregator")
        self._next("punct", "(")
        sig, direction = self._signal()
        self._next("punct", "(")
        seg, seg_total = self._fraction()
        self._next("punct", ")")
        self._next("punct", ")")
        self._next("punct", "]")
        self._next("punct", ")")
        if self._peek() is not None:
            raise FeatureSyntaxError("trailing input", self.text, self._offset())
        return FeatureExpr(act, outer, selector, inner, sig, direction, seg, seg_total)


def _byte(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


def parse(text: str) -> FeatureExpr:
    """Parse one canonical feature name.

    Raises FeatureSyntaxError (with byte offset) on malformed text and
    FeatureValidationError when indices are out of range.
    """
    return _Parser(text).parse()


@dataclass(frozen=True)
class SpaceConfig:
    K: int = 7
    D: int = 4
    N: int = 50
    signals: tuple[str, ...] = SIGNALS
    inner: tuple[str, ...] = AGGREGATORS
    outer: tuple[str, ...] = AGGREGATORS
    activators: tuple[str, ...] = ACTIVATORS
    directions: tuple[str, ...] = DIRECTIONS

    def __post_init__(self):
        if self.K < 1 or self.D < 1:
            raise FeatureValidationError("K and D must be >= 1")
        if self.N < self.K:
            raise FeatureValidationError(f"N={self.N} must be >= K={self.K}")
        for values, allowed, what in (
            (self.signals, SIGNALS, "signal"),
            (self.inner, AGGREGATORS, "aggregator"),
            (self.outer, AGGREGATORS, "aggregator"),
            (self.activators, ACTIVATORS, "activator"),
            (self.directions, DIRECTIONS, "direction"),
        ):
            for v in values:
                if v not in allowed:
                    raise FeatureValidationError(f"unknown {what} {v!r}")

    def selectors(self) -> list[Selector]:
        singles: list[Selector] = [Single(a, self.K) for a in range(1, self.K + 1)]
        diffs: list[Selector] = [Diff(a, self.K, c, self.K) for a, c in combinations(range(1, self.K + 1), 2)]
        return singles + diffs

    def count(self) -> int:
        n_sel = self.K + self.K * (self.K - 1) // 2
        return (
            len(self.directions) * len(self.signals) * self.D * len(self.inner)
            * n_sel * len(self.outer) * len(self.activators)
        )


def iter_space(cfg: SpaceConfig) -> Iterator[FeatureExpr]:
    selectors = cfg.selectors()
    for direction in cfg.directions:
        for signal in cfg.signals:
            for seg in range(1, cfg.D + 1):
                for inner in cfg.inner:
                    for sel in selectors:
                        for outer in cfg.outer:
                            for act in cfg.activators:
                                yield FeatureExpr(act, outer, sel, inner, signal, direction, seg, cfg.D)


def enumerate_space(cfg: SpaceConfig) -> list[FeatureExpr]:
    """All features of the space in the frozen column order.

    Order: direction, signal, segment, inner aggregator, selector (singles
    ascending then differences lexicographic), outer aggregator, activator.
    """
    return list(iter_space(cfg))


def read_feature_list(path) -> list[FeatureExpr]:
    with open(path, encoding="utf-8") as fh:
        return [parse(line.strip()) for line in fh if line.strip()]


def write_feature_list(path, exprs: Sequence[FeatureExpr]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in exprs:
            fh.write(render(e) + "\n")
