"""Loss accounting: total squared loss and the running cumulative error curve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch


@dataclass(frozen=True)
class ErrorCurve:
    """Cumulative normalized error, one point per test step.

    points[j] = (t, mean of squared residuals over the first j+1 test steps);
    final_total is the plain sum of squared residuals over the whole window.
    """

    points: tuple[tuple[int, float], ...]
    final_total: float

    @property
    def final_value(self) -> float:
        return self.points[-1][1]

    @property
    def values(self) -> np.ndarray:
        return np.asarray([v for _, v in self.points], dtype=float)


def _paired(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1 or y.size < 1:
        raise LengthMismatch(f"shapes {y.shape} vs {yhat.shape}")
    return y, yhat


def total_squared_loss(y, yhat) -> float:
    y, yhat = _paired(y, yhat)
    return float(np.sum((y - yhat) ** 2))


def cumulative_normalized_curve(y, yhat, t_start: int) -> ErrorCurve:
    """Running mean of squared errors over the test window.

    The denominator is the within-window step count, so the first point is the
    first squared residual; t_start is the absolute index of the first test
    sample and only labels the points.
    """
    y, yhat = _paired(y, yhat)
    sq = (y - yhat) ** 2
    running = np.cumsum(sq) / np.arange(1, sq.size + 1)
    points = tuple(
        (t_start + j, float(running[j])) for j in range(sq.size)
    )
    return ErrorCurve(points=points, final_total=float(sq.sum()))
