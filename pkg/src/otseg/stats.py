"""Correlation statistics for the evaluation harness."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedCorrelationError, ValidationError


def _check_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise ValidationError("correlation inputs must be 1-D vectors")
    if x.size != y.size:
        raise ValidationError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValidationError("correlation needs at least 2 points")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValidationError("correlation inputs must be finite")
    return x, y


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Sample Pearson correlation coefficient.

    Raises :class:`UndefinedCorrelationError` when either vector is
    constant (zero variance makes the coefficient undefined).
    """
    x, y = _check_pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sx2 = float((dx * dx).sum())
    sy2 = float((dy * dy).sum())
    if sx2 == 0.0 or sy2 == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    # sqrt of the product (not product of sqrts): perfectly correlated inputs
    # then yield exactly +-1
    r = float((dx * dy).sum()) / math.sqrt(sx2 * sy2)
    return min(1.0, max(-1.0, r))


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Rank correlation: Pearson coefficient of average-rank vectors."""
    x, y = _check_pair(x, y)
    return pearson(rankdata(x), rankdata(y))
