"""Domain types: tasks, observations, context tables, queries, predictive vectors.

A context is an ordered table of (x, y) rows. Predictions are tracked at m
fixed covariate-event pairs; the resulting length-m probability vectors are
the objects whose increments drive everything downstream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ._rng import stream
from .errors import DataError

BINARY = "binary"
MULTICLASS = "multiclass"
REGRESSION_CDF = "regression_cdf"

_KINDS = (BINARY, MULTICLASS, REGRESSION_CDF)


@dataclass(frozen=True)
class TaskKind:
    """What the rule predicts: success probability, class mass, or CDF value.

    ``thresholds`` (regression only) is an optional strictly increasing grid
    used as the default response discretization where one is needed.
    """

    kind: str
    n_classes: int | None = None
    thresholds: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DataError(f"unknown task kind {self.kind!r}")
        if self.kind == BINARY:
            object.__setattr__(self, "n_classes", 2)
        elif self.kind == MULTICLASS:
            if self.n_classes is None or int(self.n_classes) < 2:
                raise DataError("multiclass task requires n_classes >= 2")
            object.__setattr__(self, "n_classes", int(self.n_classes))
        if self.thresholds is not None:
            if self.kind != REGRESSION_CDF:
                raise DataError("thresholds only apply to regression_cdf tasks")
            t = tuple(float(v) for v in self.thresholds)
            if len(t) and not all(a < b for a, b in zip(t, t[1:])):
                raise DataError("thresholds must be strictly increasing")
            object.__setattr__(self, "thresholds", t)

    @classmethod
    def binary(cls) -> "TaskKind":
        return cls(BINARY)

    @classmethod
    def multiclass(cls, n_classes: int) -> "TaskKind":
        return cls(MULTICLASS, n_classes=n_classes)

    @classmethod
    def regression(cls, thresholds: Sequence[float] | None = None) -> "TaskKind":
        return cls(REGRESSION_CDF, thresholds=None if thresholds is None else tuple(thresholds))

    @property
    def is_classification(self) -> bool:
        return self.kind in (BINARY, MULTICLASS)


@dataclass(frozen=True)
class Observation:
    """One (x, y) row; x is a covariate vector, y a label or real response."""

    x: tuple[float, ...]
    y: float | int

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        if not all(np.isfinite(x)):
            raise DataError("non-finite covariate")
        object.__setattr__(self, "x", x)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ContextTable:
    """Ordered, validated context z_{1:n}. Immutable; safe to share."""

    xs: np.ndarray  # (n, d) float64
    ys: np.ndarray  # (n,) int64 for classification, float64 for regression
    task: TaskKind

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.float64)
        if xs.ndim == 1:
            xs = xs[:, None]
        if xs.ndim != 2 or xs.shape[0] == 0:
            raise DataError("context needs a nonempty (n, d) covariate array")
        if not np.all(np.isfinite(xs)):
            raise DataError("non-finite covariate value")
        if self.task.is_classification:
            ys = np.asarray(self.ys)
            if not np.all(np.isfinite(np.asarray(ys, dtype=np.float64))):
                raise DataError("non-finite label")
            yi = np.asarray(ys, dtype=np.int64)
            if np.any(yi != np.asarray(ys, dtype=np.float64)):
                raise DataError("classification labels must be integers")
            if yi.min() < 0 or yi.max() >= self.task.n_classes:
                raise DataError(
                    f"class label outside [0, {self.task.n_classes})"
                )
            ys = yi
        else:
            ys = np.asarray(self.ys, dtype=np.float64)
            if not np.all(np.isfinite(ys)):
                raise DataError("non-finite response")
        if ys.shape != (xs.shape[0],):
            raise DataError("xs and ys row counts differ")
        object.__setattr__(self, "xs", _frozen(xs))
        object.__setattr__(self, "ys", _frozen(ys))

    def __len__(self) -> int:
        return self.xs.shape[0]

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def d(self) -> int:
        return self.xs.shape[1]

    @property
    def rows(self) -> tuple[Observation, ...]:
        return tuple(
            Observation(tuple(x), y.item()) for x, y in zip(self.xs, self.ys)
        )

    def head(self, k: int) -> "ContextTable":
        """Prefix z_{1:k} sharing the underlying arrays."""
        if not 1 <= k <= self.n:
            raise DataError(f"prefix length {k} outside [1, {self.n}]")
        return ContextTable(self.xs[:k], self.ys[:k], self.task)

    def append_row(self, x, y) -> "ContextTable":
        xs = np.vstack([self.xs, np.asarray(x, dtype=np.float64).reshape(1, -1)])
        ys = np.append(self.ys, y)
        return ContextTable(xs, ys, self.task)


def validate_context(rows: Iterable[Observation], task: TaskKind) -> ContextTable:
    """Check row shapes, label domains, and finiteness; preserves row order."""
    rows = list(rows)
    if not rows:
        raise DataError("empty context")
    d = len(rows[0].x)
    for i, r in enumerate(rows):
        if len(r.x) != d:
            raise DataError(f"row {i}: covariate dimension {len(r.x)} != {d}")
    xs = np.array([r.x for r in rows], dtype=np.float64)
    ys = np.array([r.y for r in rows])
    return ContextTable(xs, ys, task)


def permute_rows(table: ContextTable, seed: int) -> ContextTable:
    """Uniformly random row permutation, deterministic in (table, seed).

    Fisher-Yates via the seeded project generator; the multiset of rows is
    preserved exactly.
    """
    perm = stream(seed, "row-permutation").permutation(table.n)
    return ContextTable(table.xs[perm], table.ys[perm], table.task)


@dataclass(frozen=True)
class QuerySpec:
    """The m tracked covariate-event pairs.

    ``events[j]`` is a class index for classification tasks and a threshold
    t_j for regression tasks.
    """

    xs: np.ndarray  # (m, d)
    events: tuple[float | int, ...]

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.float64)
        if xs.ndim == 1:
            xs = xs[:, None]
        if xs.ndim != 2 or xs.shape[0] == 0:
            raise DataError("queries need a nonempty (m, d) covariate array")
        if not np.all(np.isfinite(xs)):
            raise DataError("non-finite query covariate")
        ev = tuple(self.events)
        if len(ev) != xs.shape[0]:
            raise DataError("one event per query point required")
        object.__setattr__(self, "xs", _frozen(xs))
        object.__setattr__(self, "events", ev)

    @property
    def m(self) -> int:
        return self.xs.shape[0]

    @property
    def d(self) -> int:
        return self.xs.shape[1]

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[Sequence[float], float | int]]) -> "QuerySpec":
        xs = np.array([p[0] for p in pairs], dtype=np.float64)
        return cls(xs, tuple(p[1] for p in pairs))

    @classmethod
    def for_grid(cls, grid: Sequence[float], event: float | int) -> "QuerySpec":
        """One shared event at each point of a 1-d covariate grid."""
        xs = np.asarray(grid, dtype=np.float64).reshape(-1, 1)
        return cls(xs, tuple([event] * xs.shape[0]))

    def validate_for(self, task: TaskKind) -> None:
        if task.is_classification:
            for j, e in enumerate(self.events):
                if int(e) != e or not 0 <= int(e) < task.n_classes:
                    raise DataError(f"query {j}: class index {e!r} outside task domain")
        else:
            for j, e in enumerate(self.events):
                if not np.isfinite(float(e)):
                    raise DataError(f"query {j}: non-finite threshold")


@dataclass(frozen=True)
class PredictiveVector:
    """Length-m probability vector P_k at the tracked queries.

    Values outside [0, 1] are a hard error here, never silently clipped;
    range repair belongs to whoever produced the numbers.
    """

    values: np.ndarray
    prefix_len: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.size == 0:
            raise DataError("empty predictive vector")
        if not np.all(np.isfinite(v)):
            raise DataError("non-finite predictive value")
        bad = np.where((v < 0.0) | (v > 1.0))[0]
        if bad.size:
            raise DataError(
                f"predictive value {v[bad[0]]!r} at index {bad[0]} outside [0, 1]"
            )
        if self.prefix_len < 0:
            raise DataError("negative prefix length")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def m(self) -> int:
        return self.values.shape[0]


def check_distribution(values: np.ndarray, tol: float = 1e-9) -> None:
    """Assert a full per-class distribution: nonnegative, sums to 1 within tol."""
    v = np.asarray(values, dtype=np.float64)
    if abs(float(v.sum()) - 1.0) > tol:
        raise DataError(f"class distribution sums to {v.sum()!r}, not 1")


def load_table(
    path,
    label_column: str,
    task: TaskKind,
) -> tuple[ContextTable, list | None]:
    """Ingest a UTF-8 CSV with a header row into a ContextTable.

    The named column holds labels; every other column must be numeric and
    becomes a covariate (column order preserved). Classification labels may
    be arbitrary strings; they are mapped to dense indices 0..K-1 in sorted
    order and the mapping is returned (None for regression).
    """
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        if label_column not in header:
            raise DataError(f"{path}: no column named {label_column!r} in header")
        li = header.index(label_column)
        xs_rows: list[list[float]] = []
        raw_labels: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for ci, cell in enumerate(row):
                if ci == li:
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: column {header[ci]!r}: non-numeric value {cell!r}"
                    ) from None
            xs_rows.append(vals)
            raw_labels.append(row[li])
    if not xs_rows:
        raise DataError(f"{path}: no data rows")

    if task.is_classification:
        classes = sorted(set(raw_labels))
        if task.kind == BINARY and len(classes) > 2:
            raise DataError(f"{path}: {len(classes)} distinct labels for a binary task")
        if task.kind == MULTICLASS and len(classes) > task.n_classes:
            raise DataError(
                f"{path}: {len(classes)} distinct labels exceed n_classes={task.n_classes}"
            )
        index = {c: i for i, c in enumerate(classes)}
        ys = np.array([index[c] for c in raw_labels], dtype=np.int64)
        return ContextTable(np.array(xs_rows), ys, task), classes
    try:
        ys = np.array([float(c) for c in raw_labels], dtype=np.float64)
    except ValueError:
        raise DataError(f"{path}: non-numeric response in column {label_column!r}") from None
    return ContextTable(np.array(xs_rows), ys, task), None
