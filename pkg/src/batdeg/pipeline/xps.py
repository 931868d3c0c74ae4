"""XPS surface compositions of failed cells and their interfacial-chemistry patterns.

The bundled fixture holds 56 after-etching compositions (eight element
fractions in percent) together with a reference grouping and its centers.
Patterns are K-means clusters with singleton clusters dropped, numbered
1..6 in the order LT-SL, MT-MLL, MT-SL, MT-ML, HT-LL, HT-LRL.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..cluster import kmeans_fit

ELEMENTS = ("Li1s", "C1s", "O1s", "F1s", "P2p", "Ni3p1", "Co3p1", "Mn3p")
PATTERN_ORDER = ("LT-SL", "MT-MLL", "MT-SL", "MT-ML", "HT-LL", "HT-LRL")
FIXTURE = "xps_after_etching.csv"
CENTERS = "xps_group_centers.csv"
DERIVED = "xps_listed_derived.csv"


@dataclass(frozen=True)
class XpsSample:
    data_tag: str
    life: int
    temperature: float
    fractions: tuple          # percent, in ELEMENTS order
    group: int | None = None  # reference grouping, when known

    def __post_init__(self):
        if len(self.fractions) != len(ELEMENTS):
            raise ValueError(f"{self.data_tag}: expected {len(ELEMENTS)} fractions, got {len(self.fractions)}")

    def fraction(self, element: str) -> float:
        return self.fractions[ELEMENTS.index(element)]

    @property
    def co(self) -> float:
        return self.fraction("C1s") + self.fraction("O1s")

    @property
    def pf(self) -> float:
        return self.fraction("F1s") + self.fraction("P2p")

    @property
    def co_ratio(self) -> float:
        return self.co / (self.co + self.pf)


def _data_path(name: str) -> Path:
    return Path(str(resources.files("batdeg") / "data" / name))


def load_xps(path=None) -> list[XpsSample]:
    """Read a composition CSV (the bundled fixture when ``path`` is None)."""
    path = _data_path(FIXTURE) if path is None else Path(path)
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"data_tag", "life", "temperature", *ELEMENTS} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                group = row.get("group")
                out.append(XpsSample(
                    row["data_tag"], int(row["life"]), float(row["temperature"]),
                    tuple(float(row[e]) for e in ELEMENTS),
                    int(group) if group not in (None, "") else None))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out


def load_group_centers(path=None) -> tuple[dict, dict]:
    """Reference centers as ({group: label or ''}, {group: center vector})."""
    path = _data_path(CENTERS) if path is None else Path(path)
    labels, centers = {}, {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            g = int(row["group"])
            labels[g] = row["label"]
            centers[g] = np.array([float(row[e]) for e in ELEMENTS])
    return labels, centers


def load_listed_derived(path=None) -> dict:
    """Listed CO, PF and CO ratio per tag, as printed next to the compositions."""
    path = _data_path(DERIVED) if path is None else Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        return {r["data_tag"]: (float(r["CO"]), float(r["PF"]), float(r["CO_ratio"]))
                for r in csv.DictReader(fh)}


def sum_violations(samples, tol: float = 0.5) -> list[tuple[str, float]]:
    """Rows whose eight fractions do not sum to 100 within ``tol``, or hold a negative fraction."""
    bad = []
    for s in samples:
        total = float(sum(s.fractions))
        if abs(total - 100.0) > tol or min(s.fractions) < 0:
            bad.append((s.data_tag, total))
    return bad


def ratio_violations(samples, listed: dict, tol: float = 5e-4) -> list[tuple[str, float, float]]:
    """Rows whose recomputed CO/(CO+PF) misses the listed ratio by more than ``tol``."""
    bad = []
    for s in samples:
        if s.data_tag not in listed:
            continue
        r = listed[s.data_tag][2]
        if abs(s.co_ratio - r) > tol:
            bad.append((s.data_tag, s.co_ratio, r))
    return bad


def matrix(samples) -> np.ndarray:
    return np.array([s.fractions for s in samples], dtype=float)


@dataclass
class PatternAssignment:
    patterns: dict                 # "Pattern n" -> member tags
    names: dict                    # "Pattern n" -> label (e.g. "LT-SL") or ""
    excluded: list                 # tags in singleton clusters
    centroids: dict                # "Pattern n" -> centroid
    inertia: float | None = None
    labels: dict = field(default_factory=dict)   # tag -> pattern number (1-based), absent if excluded

    def summary_lines(self) -> list[str]:
        lines = []
        for p, tags in self.patterns.items():
            name = self.names.get(p) or "-"
            lines.append(f"{p} ({name}): {len(tags)} cells")
        for tag in self.excluded:
            lines.append(f"excluded singleton: {tag}")
        return lines

    def to_json(self) -> dict:
        return {
            "patterns": self.patterns,
            "names": self.names,
            "excluded": self.excluded,
            "centroids": {p: c.tolist() for p, c in self.centroids.items()},
            "inertia": self.inertia,
        }


def _named_reference(labels: dict, centers: dict) -> tuple[list, np.ndarray]:
    by_label = {lab: g for g, lab in labels.items() if lab}
    names = [n for n in PATTERN_ORDER if n in by_label]
    return names, np.array([centers[by_label[n]] for n in names])


def _assemble(tags, X, clusters: list[np.ndarray], reference, inertia=None) -> PatternAssignment:
    """Number the retained clusters: matched to reference centers (minimum total
    squared distance) when given, remaining ones by descending size."""
    kept = [m for m in clusters if len(m) > 1]
    excluded = sorted((tags[i] for m in clusters if len(m) == 1 for i in m), key=tags.index)
    cents = [X[m].mean(axis=0) for m in kept]
    slot_of: dict[int, int] = {}
    names_for: dict[int, str] = {}
    if reference is not None and kept:
        ref_names, ref_centers = reference
        cost = ((np.array(cents)[:, None, :] - ref_centers[None, :, :]) ** 2).sum(axis=-1)
        rows, cols = linear_sum_assignment(cost)
        for r, c in zip(rows, cols):
            slot_of[r] = c
            names_for[r] = ref_names[c]
    rest = sorted((i for i in range(len(kept)) if i not in slot_of),
                  key=lambda i: (-len(kept[i]), int(kept[i].min())))
    start = len(reference[0]) if reference is not None else 0
    for n, i in enumerate(rest):
        slot_of[i] = start + n
    order = sorted(range(len(kept)), key=slot_of.get)
    patterns, names, centroids, labels = {}, {}, {}, {}
    for number, i in enumerate(order, start=1):
        p = f"Pattern {number}"
        patterns[p] = [tags[j] for j in sorted(kept[i])]
        names[p] = names_for.get(i, "")
        centroids[p] = cents[i]
        for j in kept[i]:
            labels[tags[j]] = number
    return PatternAssignment(patterns, names, excluded, centroids, inertia, labels)


def xps_patterns(samples, k: int = 8, seed: int = 0, n_init: int = 10,
                 reference: tuple | None = None) -> PatternAssignment:
    """K-means patterns. ``reference`` is (names, centers) for naming clusters,
    e.g. from ``fixture_reference()``."""
    samples = list(samples)
    if len(samples) < k:
        raise ValueError(f"need at least k={k} samples, got {len(samples)}")
    X = matrix(samples)
    model = kmeans_fit(X, k, seed=seed, n_init=n_init)
    clusters = [np.flatnonzero(model.assignments == j) for j in range(k)]
    clusters = [m for m in clusters if len(m)]
    tags = [s.data_tag for s in samples]
    return _assemble(tags, X, clusters, reference, model.inertia)


def fixture_reference() -> tuple[list, np.ndarray]:
    return _named_reference(*load_group_centers())


def fixture_patterns(samples=None) -> PatternAssignment:
    """Patterns from the fixture's reference grouping rather than a fresh clustering."""
    samples = load_xps() if samples is None else list(samples)
    X = matrix(samples)
    groups = sorted({s.group for s in samples})
    clusters = [np.array([i for i, s in enumerate(samples) if s.group == g]) for g in groups]
    tags = [s.data_tag for s in samples]
    return _assemble(tags, X, clusters, fixture_reference())
