"""Trace ingestion, time windowing, supervised sequences and standardization.

Canonical CSV schemas::

    metrics: timestamp,service_id,cpu_util,mem_util,response_time_ms,request_rate_rps
    calls:   timestamp,caller_id,callee_id,count

Each window yields one `GraphSnapshot` whose node features are the per-service
means of the four metrics (in ``FEATURES`` order) and whose edge weights are
summed call counts.
"""
from __future__ import annotations

import csv
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import IO, Iterable, Union

import numpy as np

from .errors import InsufficientDataError, ParseError, ValidationError
from .graph import GraphSnapshot, align_to_vocabulary

FEATURES = ("cpu_util", "mem_util", "response_time_ms", "request_rate_rps")
TARGET_FEATURE = "response_time_ms"
TARGET_INDEX = FEATURES.index(TARGET_FEATURE)
METRICS_HEADER = ("timestamp", "service_id") + FEATURES
CALLS_HEADER = ("timestamp", "caller_id", "callee_id", "count")
STD_FLOOR = 1e-8

Source = Union[str, os.PathLike, IO[str]]


@dataclass(frozen=True)
class TraceEvent:
    timestamp: int
    service_id: str
    cpu_util: float
    mem_util: float
    response_time_ms: float
    request_rate_rps: float

    def __post_init__(self):
        for name in ("cpu_util", "mem_util"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]", name)
        for name in ("response_time_ms", "request_rate_rps"):
            v = getattr(self, name)
            if not (v >= 0.0 and math.isfinite(v)):
                raise ValidationError(f"{name}={v} must be finite and non-negative", name)

    def feature_vector(self) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in FEATURES)


@dataclass(frozen=True)
class CallRecord:
    timestamp: int
    caller_id: str
    callee_id: str
    count: int

    def __post_init__(self):
        if self.caller_id == self.callee_id:
            raise ValidationError(f"self-call on {self.caller_id!r}", "callee_id")
        if self.count < 1:
            raise ValidationError(f"count={self.count} must be >= 1", "count")


def _open(source: Source):
    if hasattr(source, "read"):
        return source, False
    return open(source, newline="", encoding="utf-8"), True


def _read_rows(source: Source, header: tuple[str, ...]):
    fh, owned = _open(source)
    try:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            raise ParseError("missing header", 1)
        if tuple(c.strip() for c in first) != header:
            raise ParseError(f"expected header {','.join(header)!r}, got {','.join(first)!r}", 1)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", reader.line_num)
            yield reader.line_num, [c.strip() for c in row]
    finally:
        if owned:
            fh.close()


def _int(text: str, field_name: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{field_name}={text!r} is not an integer", line) from None


def _float(text: str, field_name: str, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"{field_name}={text!r} is not a number", line) from None
    if not math.isfinite(v):
        raise ParseError(f"{field_name}={text!r} is not finite", line)
    return v


def parse_metrics(source: Source) -> list[TraceEvent]:
    events = []
    for line, row in _read_rows(source, METRICS_HEADER):
        ts = _int(row[0], "timestamp", line)
        vals = [_float(v, name, line) for v, name in zip(row[2:], FEATURES)]
        try:
            events.append(TraceEvent(ts, row[1], *vals))
        except ValidationError as exc:
            raise ValidationError(f"line {line}: {exc}", exc.field) from None
    return events


def parse_calls(source: Source) -> list[CallRecord]:
    calls = []
    for line, row in _read_rows(source, CALLS_HEADER):
        ts = _int(row[0], "timestamp", line)
        count = _int(row[3], "count", line)
        try:
            calls.append(CallRecord(ts, row[1], row[2], count))
        except ValidationError as exc:
            raise ValidationError(f"line {line}: {exc}", exc.field) from None
    return calls


def parse_trace(metrics_source: Source, calls_source: Source | None = None):
    """Parse both CSVs. ``calls_source=None`` means no call edges."""
    events = parse_metrics(metrics_source)
    calls = parse_calls(calls_source) if calls_source is not None else []
    return events, calls


def write_metrics_csv(events: Iterable[TraceEvent], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for e in events:
        w.writerow([e.timestamp, e.service_id] + [repr(float(v)) for v in e.feature_vector()])


def write_calls_csv(calls: Iterable[CallRecord], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CALLS_HEADER)
    for c in calls:
        w.writerow([c.timestamp, c.caller_id, c.callee_id, c.count])


def window_events(
    events: list[TraceEvent],
    calls: list[CallRecord],
    window_len_s: int,
    start: int | None = None,
    end: int | None = None,
) -> list[GraphSnapshot]:
    """Slice the timeline into consecutive windows [start + k*L, start + (k+1)*L).

    ``start`` and ``end`` default to the first event and one past the last one.
    Events and calls outside [start, end) are ignored.
    """
    if window_len_s <= 0:
        raise ValueError("window_len_s must be positive")
    stamps = [e.timestamp for e in events] + [c.timestamp for c in calls]
    if start is None:
        start = min(stamps) if stamps else 0
    if end is None:
        end = max(stamps) + 1 if stamps else start + window_len_s
    if end <= start:
        raise ValueError(f"end ({end}) must be after start ({start})")
    n_windows = -(-(end - start) // window_len_s)

    sums: list[dict[str, np.ndarray]] = [defaultdict(lambda: np.zeros(len(FEATURES))) for _ in range(n_windows)]
    counts: list[dict[str, int]] = [defaultdict(int) for _ in range(n_windows)]
    for e in events:
        if start <= e.timestamp < end:
            k = (e.timestamp - start) // window_len_s
            sums[k][e.service_id] += e.feature_vector()
            counts[k][e.service_id] += 1
    edge_w: list[dict[tuple[str, str], int]] = [defaultdict(int) for _ in range(n_windows)]
    for c in calls:
        if start <= c.timestamp < end:
            k = (c.timestamp - start) // window_len_s
            edge_w[k][(c.caller_id, c.callee_id)] += c.count

    snapshots = []
    for k in range(n_windows):
        ids = sorted(counts[k])
        pos = {sid: i for i, sid in enumerate(ids)}
        feats = np.array([sums[k][sid] / counts[k][sid] for sid in ids]).reshape(len(ids), len(FEATURES))
        edges = [
            (pos[src], pos[dst], float(w))
            for (src, dst), w in sorted(edge_w[k].items())
            if src in pos and dst in pos
        ]
        snapshots.append(GraphSnapshot(k, start + k * window_len_s, ids, edges, feats))
    return snapshots


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray
    names: tuple[str, ...] = FEATURES

    def index(self, feature: str | int) -> int:
        return feature if isinstance(feature, int) else self.names.index(feature)


def portion(fraction: float, total: int) -> int:
    """Number of leading windows covered by ``fraction`` of ``total`` (round half up)."""
    return int(math.floor(fraction * total + 0.5))


@dataclass(frozen=True)
class SnapshotSequence:
    """Aligned windows over a fixed vocabulary plus the horizon-shifted response-time targets.

    ``target_range`` restricts supervision to prediction points whose *target*
    window lies in ``[lo, hi)``; the inputs before them remain available for warm-up.
    """

    snapshots: tuple[GraphSnapshot, ...]
    vocabulary: tuple[str, ...]
    presence: np.ndarray = field(repr=False)
    window_len_s: int
    horizon_steps: int = 1
    feature_stats: FeatureStats | None = None
    target_range: tuple[int, int] | None = None

    @property
    def num_windows(self) -> int:
        return len(self.snapshots)

    @property
    def num_nodes(self) -> int:
        return len(self.vocabulary)

    @cached_property
    def window_starts(self) -> np.ndarray:
        return np.array([s.window_start for s in self.snapshots], dtype=np.int64)

    @cached_property
    def features(self) -> np.ndarray:
        """(T, N, d) feature tensor; rows of absent nodes are zero."""
        return np.stack([s.features for s in self.snapshots])

    @property
    def bounds(self) -> tuple[int, int]:
        return self.target_range if self.target_range is not None else (0, self.num_windows)

    @cached_property
    def targets(self) -> np.ndarray:
        """(T, N): value of the target feature at t + horizon (zero past the end)."""
        T, dt = self.num_windows, self.horizon_steps
        y = np.zeros((T, self.num_nodes))
        if T > dt:
            y[: T - dt] = self.features[dt:, :, TARGET_INDEX]
        return y

    @cached_property
    def target_mask(self) -> np.ndarray:
        """(T, N) bool: node observed at t and at t + horizon, target window inside ``bounds``."""
        T, dt = self.num_windows, self.horizon_steps
        lo, hi = self.bounds
        mask = np.zeros((T, self.num_nodes), dtype=bool)
        for t in range(T - dt):
            if lo <= t + dt < hi:
                mask[t] = self.presence[t] & self.presence[t + dt]
        return mask

    @property
    def supervised_windows(self) -> list[int]:
        lo, hi = self.bounds
        return [t for t in range(self.num_windows - self.horizon_steps) if lo <= t + self.horizon_steps < hi]

    def with_range(self, lo: int, hi: int) -> "SnapshotSequence":
        return replace(self, target_range=(lo, hi))


def make_supervised(snapshots: list[GraphSnapshot], horizon_steps: int = 1, window_len_s: int | None = None) -> SnapshotSequence:
    if horizon_steps < 1:
        raise ValueError("horizon_steps must be >= 1")
    if len(snapshots) <= horizon_steps:
        raise InsufficientDataError(
            f"{len(snapshots)} windows cannot supply targets {horizon_steps} window(s) ahead"
        )
    starts = [s.window_start for s in snapshots]
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise ValidationError("window starts must be strictly increasing", "window_start")
    if window_len_s is None:
        window_len_s = starts[1] - starts[0]
    if any(b - a != window_len_s for a, b in zip(starts, starts[1:])):
        raise ValidationError(f"windows are not uniformly spaced at {window_len_s}s", "window_start")
    aligned, vocab, presence = align_to_vocabulary(list(snapshots))
    return SnapshotSequence(tuple(aligned), vocab, presence, int(window_len_s), horizon_steps)


def fit_standardizer(seq: SnapshotSequence, train_fraction: float = 1.0) -> FeatureStats:
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError(f"train_fraction must be in (0, 1], got {train_fraction}")
    n = max(1, portion(train_fraction, seq.num_windows))
    present = seq.presence[:n]
    if not present.any():
        raise InsufficientDataError("no observed services in the training windows")
    rows = seq.features[:n][present]
    mean = rows.mean(axis=0)
    std = np.maximum(rows.std(axis=0), STD_FLOOR)
    return FeatureStats(mean, std)


def _map_features(seq: SnapshotSequence, fn) -> SnapshotSequence:
    snaps = []
    for t, snap in enumerate(seq.snapshots):
        feats = snap.features.copy()
        present = seq.presence[t]
        feats[present] = fn(feats[present])
        snaps.append(GraphSnapshot(snap.window_index, snap.window_start, snap.node_ids, snap.edges, feats))
    return replace(seq, snapshots=tuple(snaps))


def standardize(seq: SnapshotSequence, stats: FeatureStats) -> SnapshotSequence:
    if seq.feature_stats is not None:
        raise ValueError("sequence is already standardized")
    out = _map_features(seq, lambda x: (x - stats.mean) / stats.std)
    return replace(out, feature_stats=stats)


def unstandardize(values, stats: FeatureStats, feature: str | int = TARGET_FEATURE) -> np.ndarray:
    i = stats.index(feature)
    return np.asarray(values, dtype=np.float64) * stats.std[i] + stats.mean[i]


def split_counts(total: int, train: float = 0.6, val: float = 0.2) -> tuple[int, int, int]:
    """Window counts of the chronological train/val/test partitions."""
    if train <= 0 or val <= 0 or train + val > 1:
        raise ValueError(f"need positive fractions with train + val <= 1, got {train}/{val}")
    n_train = portion(train, total)
    n_val = portion(val, total)
    n_test = total - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise InsufficientDataError(f"split of {total} windows into {n_train}/{n_val}/{n_test} leaves a partition empty")
    return n_train, n_val, n_test


def split(seq: SnapshotSequence, train: float = 0.6, val: float = 0.2):
    """Chronological train/val/test split; fits stats on the train windows and standardizes.

    Window counts are ``round(train*T)`` and ``round(val*T)`` (half up); test takes
    the rest. Every returned sequence holds the full standardized timeline and
    differs only in ``target_range``.
    """
    T = seq.num_windows
    n_train, n_val, _ = split_counts(T, train, val)
    stats = fit_standardizer(seq, n_train / T)
    std_seq = standardize(seq, stats) if seq.feature_stats is None else seq
    parts = (
        std_seq.with_range(0, n_train),
        std_seq.with_range(n_train, n_train + n_val),
        std_seq.with_range(n_train + n_val, T),
    )
    for name, part in zip(("train", "val", "test"), parts):
        if not part.supervised_windows:
            raise InsufficientDataError(f"{name} partition has no supervised windows at horizon {seq.horizon_steps}")
    return parts


def load_sequence(
    metrics_source: Source,
    calls_source: Source | None,
    window_len_s: int,
    horizon_steps: int = 1,
) -> SnapshotSequence:
    events, calls = parse_trace(metrics_source, calls_source)
    if not events:
        raise InsufficientDataError("trace has no metric rows")
    return make_supervised(window_events(events, calls, window_len_s), horizon_steps, window_len_s)

