"""Predictive accuracy and uncertainty-calibration metrics.

q2 is the predictivity coefficient: one minus squared error normalized by
N times the population variance of the truths.  Coverage is the fraction
of truths inside their closed prediction interval; mpiw is the mean
interval width.  An emulator is sharp and calibrated when coverage is
close to the interval level and mpiw is small.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["EvalReport", "UndefinedMetricError", "q2", "coverage", "mpiw"]


class UndefinedMetricError(ValueError):
    """Metric has no value on this input (e.g. constant truths for q2)."""


@dataclass(frozen=True)
class EvalReport:
    """Metrics of one model evaluation on a test set."""

    q2: float
    cp: dict = field(default_factory=dict)  # level -> coverage fraction
    mpiw: dict = field(default_factory=dict)  # level -> mean width
    n_test: int = 0


def q2(predictions, truths) -> float:
    """Predictivity coefficient: 1 - SSE / (N * Var(truths)).

    Var is the population (1/N) variance.  Equals 1 for perfect
    predictions, 0 for predicting the mean of the truths, and is negative
    for anything worse.
    """
    predictions = np.asarray(predictions, dtype=float).ravel()
    truths = np.asarray(truths, dtype=float).ravel()
    if predictions.shape != truths.shape or truths.size < 2:
        raise ValueError("predictions and truths must share a length >= 2")
    var = truths.var()  # population variance
    if var == 0.0:
        raise UndefinedMetricError("q2 undefined: truths have zero variance")
    sse = float(np.sum((predictions - truths) ** 2))
    return 1.0 - sse / (truths.size * var)


def coverage(intervals, truths) -> float:
    """Fraction of truths falling inside their closed interval [lo, hi]."""
    intervals = np.asarray(intervals, dtype=float).reshape(-1, 2)
    truths = np.asarray(truths, dtype=float).ravel()
    if intervals.shape[0] != truths.size:
        raise ValueError("intervals and truths must have equal length")
    inside = (truths >= intervals[:, 0]) & (truths <= intervals[:, 1])
    return float(inside.mean())


def mpiw(intervals) -> float:
    """Mean width of the prediction intervals."""
    intervals = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if intervals.shape[0] == 0:
        raise ValueError("mpiw needs at least one interval")
    return float(np.mean(intervals[:, 1] - intervals[:, 0]))
