"""Shared domain types: target/side-info frames, splits, prediction bundles.

All types are immutable after construction; every operation here is pure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintKind
from .errors import (
    ConflictingFeature,
    DimensionMismatch,
    IndexOutOfRange,
    LengthMismatch,
)

TARGET_COLUMN = "y"


def _as_float_matrix(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected 2-d matrix, got ndim={arr.ndim}")
    return arr


@dataclass(frozen=True)
class TimeSeriesFrame:
    """A scalar target sequence with aligned, uniquely named side-info columns."""

    values: np.ndarray
    side_info: np.ndarray
    columns: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        side = _as_float_matrix(self.side_info)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "side_info", side)
        object.__setattr__(self, "columns", tuple(self.columns))
        if values.ndim != 1:
            raise DimensionMismatch("values must be 1-d")
        if side.shape[0] != values.shape[0]:
            raise DimensionMismatch(
                f"side_info has {side.shape[0]} rows, values has {values.shape[0]}"
            )
        if side.shape[1] != len(self.columns):
            raise DimensionMismatch(
                f"{side.shape[1]} side columns but {len(self.columns)} names"
            )
        if len(set(self.columns)) != len(self.columns):
            raise ConflictingFeature(f"duplicate column names in {self.columns}")
        if not np.isfinite(values).all() or not np.isfinite(side).all():
            raise ValueError("non-finite entries are rejected at ingestion")
        values.setflags(write=False)
        side.setflags(write=False)

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.columns.index(name)
        except ValueError:
            raise KeyError(f"no side-info column named {name!r}") from None
        return self.side_info[:, j]

    def has_column(self, name: str) -> bool:
        return name in self.columns

    def with_values(self, values) -> "TimeSeriesFrame":
        return TimeSeriesFrame(values, self.side_info, self.columns)


@dataclass(frozen=True)
class SplitSpec:
    """Three-way split points: base training ends at t1, meta training at t_end,
    test at t2 (all 1-based inclusive counts)."""

    t1: int
    t_end: int
    t2: int

    def __post_init__(self):
        if not (1 <= self.t1 < self.t_end < self.t2):
            raise IndexOutOfRange(
                f"need 1 <= t1 < t_end < t2, got ({self.t1}, {self.t_end}, {self.t2})"
            )


def split(
    frame: TimeSeriesFrame, spec: SplitSpec
) -> tuple[TimeSeriesFrame, TimeSeriesFrame, TimeSeriesFrame]:
    """Cut the frame into contiguous base-train / meta-train / test segments."""
    if spec.t2 > len(frame):
        raise IndexOutOfRange(f"t2={spec.t2} exceeds frame length {len(frame)}")
    bounds = [(0, spec.t1), (spec.t1, spec.t_end), (spec.t_end, spec.t2)]
    return tuple(
        TimeSeriesFrame(frame.values[a:b], frame.side_info[a:b], frame.columns)
        for a, b in bounds
    )


@dataclass(frozen=True)
class PredictionBundle:
    """Per-step predictions of M >= 2 base models, one column per model."""

    base_preds: np.ndarray
    model_names: tuple[str, ...]

    def __post_init__(self):
        preds = _as_float_matrix(self.base_preds)
        object.__setattr__(self, "base_preds", preds)
        object.__setattr__(self, "model_names", tuple(self.model_names))
        if preds.shape[1] != len(self.model_names):
            raise DimensionMismatch(
                f"{preds.shape[1]} prediction columns, {len(self.model_names)} names"
            )
        if len(self.model_names) < 2:
            raise DimensionMismatch("need at least 2 base models")
        if not np.isfinite(preds).all():
            raise ValueError("non-finite base predictions")
        preds.setflags(write=False)

    @property
    def n_models(self) -> int:
        return len(self.model_names)

    def __len__(self) -> int:
        return self.base_preds.shape[0]


AFFINE_SUM_TOL = 1e-9
CONVEX_NEG_TOL = 1e-12


@dataclass(frozen=True)
class WeightVector:
    """Combination weights together with the constraint they satisfy."""

    w: np.ndarray
    kind: ConstraintKind

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "w", w)
        if w.ndim != 1:
            raise DimensionMismatch("weights must be 1-d")
        if not np.isfinite(w).all():
            raise ValueError("non-finite weights")
        if self.kind in (ConstraintKind.AFFINE, ConstraintKind.CONVEX):
            if abs(w.sum() - 1.0) > AFFINE_SUM_TOL:
                raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        if self.kind is ConstraintKind.CONVEX and (w < -CONVEX_NEG_TOL).any():
            raise ValueError(f"negative convex weight in {w!r}")
        w.setflags(write=False)

    def combine(self, base_preds) -> float:
        return float(np.dot(self.w, np.asarray(base_preds, dtype=float)))


def build_superset_side_info(
    frames: list[tuple[np.ndarray, tuple[str, ...]]],
    extras: tuple[np.ndarray, tuple[str, ...]] | None = None,
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Union of named feature matrices, first occurrence wins, extras appended.

    Duplicate names must agree elementwise (exactly); a disagreement means two
    bases call different things by the same name, which would silently corrupt
    the ensemble features.
    """
    items = [( _as_float_matrix(m), tuple(names)) for m, names in frames]
    if extras is not None:
        items.append((_as_float_matrix(extras[0]), tuple(extras[1])))
    if not items:
        raise DimensionMismatch("no inputs")
    n_rows = items[0][0].shape[0]
    cols: list[np.ndarray] = []
    names: list[str] = []
    seen: dict[str, int] = {}
    for mat, mat_names in items:
        if mat.shape[0] != n_rows:
            raise DimensionMismatch(
                f"row count {mat.shape[0]} differs from {n_rows}"
            )
        if mat.shape[1] != len(mat_names):
            raise DimensionMismatch("column count does not match names")
        if len(set(mat_names)) != len(mat_names):
            raise ConflictingFeature(f"duplicate names within one input: {mat_names}")
        for j, name in enumerate(mat_names):
            col = mat[:, j]
            if name in seen:
                if not np.array_equal(cols[seen[name]], col):
                    raise ConflictingFeature(
                        f"column {name!r} appears twice with conflicting values"
                    )
                continue
            seen[name] = len(cols)
            cols.append(col)
            names.append(name)
    return np.column_stack(cols), tuple(names)


def load_csv(path) -> TimeSeriesFrame:
    """Ingest a dataset CSV: header row, one column named 'y', rest side info."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LengthMismatch(f"{path}: empty file") from None
        if TARGET_COLUMN not in header:
            raise ConflictingFeature(f"{path}: no column named {TARGET_COLUMN!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DimensionMismatch(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    data = np.asarray(rows, dtype=float)
    y_idx = header.index(TARGET_COLUMN)
    side_idx = [j for j in range(len(header)) if j != y_idx]
    return TimeSeriesFrame(
        data[:, y_idx],
        data[:, side_idx],
        tuple(header[j] for j in side_idx),
    )


def frame_to_rows(frame: TimeSeriesFrame) -> tuple[list[str], list[list[str]]]:
    """Render a frame as CSV header + rows (target column first)."""
    header = [TARGET_COLUMN, *frame.columns]
    rows = []
    for i in range(len(frame)):
        rows.append(
            [repr(float(frame.values[i]))]
            + [repr(float(v)) for v in frame.side_info[i]]
        )
    return header, rows
