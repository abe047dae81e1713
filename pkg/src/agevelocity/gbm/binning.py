"""Quantile histogram binning.

Bins are lower-inclusive: with cut points ``c_0 < c_1 < ...`` a value ``x``
lands in bin ``k = #{c_j <= x}``, so a value sitting exactly on a cut goes to
the bin on its right.
"""
from __future__ import annotations

import numpy as np

MAX_BINS_LIMIT = 255


def feature_cuts(column: np.ndarray, max_bins: int) -> np.ndarray:
    """Cut points for one feature: midpoints between distinct values when they
    fit in ``max_bins``, otherwise the interior ``k/max_bins`` quantiles."""
    values = np.unique(column)
    if len(values) <= 1:
        return np.empty(0)
    if len(values) <= max_bins:
        return (values[:-1] + values[1:]) / 2.0
    qs = np.quantile(column, np.arange(1, max_bins) / max_bins)
    cuts = np.unique(qs)
    # a cut at or below the minimum would leave bin 0 empty
    return cuts[cuts > values[0]]


def bin_features(X, max_bins: int = MAX_BINS_LIMIT):
    """Return ``(binned, cuts)``; ``binned`` is an ``(n, p)`` uint8 matrix."""
    X = np.asarray(X, dtype=float)
    if not 2 <= max_bins <= MAX_BINS_LIMIT:
        raise ValueError(f"max_bins must be in [2, {MAX_BINS_LIMIT}], got {max_bins}")
    cuts = [feature_cuts(X[:, j], max_bins) for j in range(X.shape[1])]
    return apply_bins(X, cuts), cuts


def apply_bins(X, cuts) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    out = np.empty(X.shape, dtype=np.uint8)
    for j, c in enumerate(cuts):
        out[:, j] = np.searchsorted(c, X[:, j], side="right")
    return out
