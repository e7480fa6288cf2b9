"""Per-track summary statistics and the fixed-layout feature vector."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import TRACK_NAMES, FeatureTrackSet
from .errors import EmptyTrack, ManifestError, UnknownMaskEntry

STAT_NAMES = ("min", "max", "range", "mean", "std", "skew", "kurt")

FULL_LAYOUT: tuple[tuple[str, str], ...] = tuple((t, s) for t in TRACK_NAMES for s in STAT_NAMES)

# Readable names used in reports, e.g. "Fundamental Frequency max value".
TRACK_LABELS = {
    "voiced": "Voiced sound",
    "unvoiced": "Unvoiced sound",
    "effective_segments": "Effective Speech Segments",
    "f0": "Fundamental Frequency",
    "log_energy": "Log Energy",
    "short_term_energy": "Short-term Energy",
    "zcr": "Zero Crossing Rate",
    "spl": "Sound Pressure Level",
    "mfcc": "MFCC",
}


def column_name(entry: tuple[str, str]) -> str:
    return f"{entry[0]}.{entry[1]}"


def parse_column(name: str) -> tuple[str, str]:
    track, _, stat = name.partition(".")
    entry = (track, stat)
    if entry not in FULL_LAYOUT:
        raise UnknownMaskEntry(name)
    return entry


@dataclass(frozen=True)
class StatSummary:
    mean: float
    std: float
    min: float
    max: float
    range: float
    skew: float
    kurt: float
    degenerate: bool = False

    def get(self, stat: str) -> float:
        return getattr(self, stat)


def aggregate_stats(track) -> StatSummary:
    """Population moments; kurtosis is excess kurtosis (fourth moment ratio - 3).

    When the spread is zero, skew and kurt are reported as 0 with
    ``degenerate=True``.
    """
    x = np.asarray(track, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptyTrack("cannot summarise an empty track")
    lo = float(x.min())
    hi = float(x.max())
    mean = float(np.clip(x.mean(), lo, hi))
    d = x - mean
    m2 = float(np.mean(d * d))
    std = float(np.sqrt(m2))
    if hi == lo or std <= 1e-12 * max(1.0, abs(mean)):
        return StatSummary(mean, std, lo, hi, hi - lo, 0.0, 0.0, degenerate=True)
    m3 = float(np.mean(d**3))
    m4 = float(np.mean(d**4))
    return StatSummary(mean, std, lo, hi, hi - lo, m3 / m2**1.5, m4 / m2**2 - 3.0)


ZERO_SUMMARY = StatSummary(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, degenerate=True)


def _paper57():
    drop = {(t, s) for t in ("voiced", "unvoiced", "effective_segments") for s in ("skew", "kurt")}
    return tuple(e for e in FULL_LAYOUT if e not in drop)


def _table4():
    # Only log energy and MFCC keep skew/kurt in the reduced-dimension table.
    keep_all = {"log_energy", "mfcc"}
    return tuple(e for e in FULL_LAYOUT if e[0] in keep_all or e[1] not in ("skew", "kurt"))


def _entries(track: str, stats: str):
    return [(track, s) for s in stats.split()]


RF23 = (
    _entries("f0", "max mean skew")
    + _entries("log_energy", "min mean std")
    + _entries("short_term_energy", "min mean std")
    + _entries("zcr", "max range mean std kurt")
    + _entries("spl", "min mean std")
    + _entries("mfcc", "min max mean std skew kurt")
)

PCA_TABLE3 = (
    _entries("f0", "max mean skew")
    + _entries("log_energy", "min max mean")
    + _entries("short_term_energy", "min max range mean std")
    + _entries("zcr", "min max range std skew kurt")
    + _entries("spl", "min max")
    + _entries("mfcc", "min max range mean std skew kurt")
)


def _ordered(entries) -> tuple[tuple[str, str], ...]:
    s = set(entries)
    return tuple(e for e in FULL_LAYOUT if e in s)


MASKS: dict[str, tuple[tuple[str, str], ...]] = {
    "full": FULL_LAYOUT,
    "paper57": _paper57(),
    "table4": _table4(),
    "rf23": _ordered(RF23),
    "pca_table3": _ordered(PCA_TABLE3),
}


def resolve_mask(mask) -> tuple[tuple[str, str], ...]:
    """Accept a mask name, a list of ``track.stat`` strings, or (track, stat) pairs."""
    if mask is None:
        return FULL_LAYOUT
    if isinstance(mask, str):
        if mask in MASKS:
            return MASKS[mask]
        raise UnknownMaskEntry(f"unknown mask {mask!r}; known: {sorted(MASKS)}")
    entries = []
    for m in mask:
        e = parse_column(m) if isinstance(m, str) else tuple(m)
        if e not in FULL_LAYOUT:
            raise UnknownMaskEntry(str(m))
        entries.append(e)
    return _ordered(entries)


def mask_name_for(layout) -> str | None:
    layout = tuple(layout)
    for name, m in MASKS.items():
        if m == layout:
            return name
    return None


@dataclass
class FeatureVector:
    values: np.ndarray
    layout: tuple[tuple[str, str], ...]
    label: int | None = None
    patient_id: str = ""
    degenerate: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if len(self.values) != len(self.layout):
            raise ValueError("values and layout lengths differ")

    @property
    def names(self) -> list[str]:
        return [column_name(e) for e in self.layout]


def summarise_tracks(tracks: FeatureTrackSet) -> dict[str, StatSummary]:
    out = {}
    for name in TRACK_NAMES:
        x = tracks.track(name)
        out[name] = aggregate_stats(x) if x.size else ZERO_SUMMARY
    return out


def build_feature_vector(tracks: FeatureTrackSet, mask="full", label=None, patient_id="") -> FeatureVector:
    layout = resolve_mask(mask)
    summaries = summarise_tracks(tracks)
    values = np.array([summaries[t].get(s) for t, s in layout], dtype=np.float64)
    degenerate = frozenset(t for t, sm in summaries.items() if sm.degenerate)
    return FeatureVector(values, layout, label, patient_id, degenerate)


@dataclass
class FeatureMatrix:
    X: np.ndarray
    column_names: list[str]
    y: np.ndarray
    groups: list[str]
    source_ids: list[str] | None = None
    row_index: np.ndarray | None = None  # original row numbers, carried through rows()

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.row_index is None:
            self.row_index = np.arange(self.X.shape[0])
        if self.X.ndim != 2:
            raise ValueError("X must be 2-D")
        n, d = self.X.shape
        if len(self.column_names) != d:
            raise ValueError("column_names length differs from X width")
        if self.y.shape != (n,) or len(self.groups) != n:
            raise ValueError("y and groups must have one entry per row")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("feature matrix contains non-finite values")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def row_index_position(self, ids) -> np.ndarray:
        """Positions in this matrix of the given original row numbers."""
        pos = {int(r): i for i, r in enumerate(self.row_index)}
        return np.array([pos[int(r)] for r in ids], dtype=np.int64)

    def rows(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureMatrix(
            self.X[idx],
            list(self.column_names),
            self.y[idx],
            [self.groups[i] for i in idx],
            None if self.source_ids is None else [self.source_ids[i] for i in idx],
            self.row_index[idx],
        )

    def columns(self, names) -> "FeatureMatrix":
        pos = {c: i for i, c in enumerate(self.column_names)}
        missing = [c for c in names if c not in pos]
        if missing:
            raise UnknownMaskEntry(f"columns not present: {missing}")
        cols = [pos[c] for c in names]
        return FeatureMatrix(self.X[:, cols], list(names), self.y.copy(), list(self.groups), self.source_ids,
                             self.row_index)

    def with_labels(self, y) -> "FeatureMatrix":
        return FeatureMatrix(self.X, list(self.column_names), np.asarray(y), list(self.groups), self.source_ids,
                             self.row_index)


def stack_vectors(vectors: list[FeatureVector], source_ids=None) -> FeatureMatrix:
    if not vectors:
        raise ValueError("no feature vectors")
    layout = vectors[0].layout
    if any(v.layout != layout for v in vectors):
        raise ValueError("feature vectors have different layouts")
    return FeatureMatrix(
        np.vstack([v.values for v in vectors]),
        [column_name(e) for e in layout],
        np.array([-1 if v.label is None else v.label for v in vectors]),
        [v.patient_id for v in vectors],
        source_ids,
    )


def write_feature_csv(fm: FeatureMatrix, path) -> None:
    from .audio import LABELS

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(fm.column_names) + ["label", "patient_id"])
        for row, y, g in zip(fm.X, fm.y, fm.groups):
            w.writerow([repr(float(v)) for v in row] + [LABELS[y] if y >= 0 else "", g])


def read_feature_csv(path) -> FeatureMatrix:
    from .audio import LABELS

    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-2:] != ["label", "patient_id"]:
            raise ManifestError(f"{path}: not a feature matrix CSV")
        cols = header[:-2]
        for c in cols:
            parse_column(c)
        X, y, g = [], [], []
        for row in reader:
            if not row:
                continue
            X.append([float(v) for v in row[:-2]])
            lab = row[-2].strip().lower()
            y.append(LABELS.index(lab) if lab else -1)
            g.append(row[-1])
    if not X:
        raise ManifestError(f"{path}: no rows")
    return FeatureMatrix(np.array(X), cols, np.array(y), g)
