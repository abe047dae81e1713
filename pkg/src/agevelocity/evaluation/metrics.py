"""Regression metrics, correlations and a seeded permutation test."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from ..errors import UndefinedStatisticError


def _pair(y, yhat, min_len):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValueError(f"inputs must be 1-D and equal length, got {y.shape} and {yhat.shape}")
    if len(y) < min_len:
        raise ValueError(f"need at least {min_len} observations, got {len(y)}")
    return y, yhat


def r2(y, yhat) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    y, yhat = _pair(y, yhat, 2)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise UndefinedStatisticError("R^2 is undefined for a constant target")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat, 1)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def pearson(x, y) -> float:
    x, y = _pair(x, y, 3)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise UndefinedStatisticError("correlation is undefined when one input has zero variance")
    return float(dx @ dy) / np.sqrt(sxx * syy)


def spearman(x, y) -> float:
    """Pearson correlation of average (mid) ranks."""
    x, y = _pair(x, y, 3)
    return pearson(rankdata(x, method="average"), rankdata(y, method="average"))


def correlation_matrix(columns: np.ndarray, method: str = "pearson") -> np.ndarray:
    """Symmetric matrix with an exact unit diagonal; NaN where undefined."""
    columns = np.asarray(columns, dtype=float)
    q = columns.shape[1]
    fn = {"pearson": pearson, "spearman": spearman}[method]
    out = np.eye(q)
    for i in range(q):
        for j in range(i + 1, q):
            try:
                out[i, j] = out[j, i] = fn(columns[:, i], columns[:, j])
            except UndefinedStatisticError:
                out[i, j] = out[j, i] = np.nan
    return out


def permutation_test(a, b, n_permutations: int = 10_000, seed: int = 0, chunk: int = 500):
    """Two-sided permutation test on the difference of group means.

    ``a`` and ``b`` are ``(k, q)`` (or 1-D) arrays; each of the ``q`` columns
    is tested with the same label shuffles. Returns ``(diff, p)`` with
    ``diff = mean(a) - mean(b)`` and ``p = (1 + #{|d*| >= |d|}) / (1 + B)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    flat = a.ndim == 1
    if flat:
        a, b = a[:, None], b[:, None]
    ka = len(a)
    pooled = np.vstack([a, b])
    n = len(pooled)
    observed = a.mean(axis=0) - b.mean(axis=0)
    total = pooled.sum(axis=0)
    rng = np.random.default_rng(seed)
    exceed = np.zeros(a.shape[1], dtype=np.int64)
    # relative tolerance so exact ties under relabeling count as "as extreme"
    thresh = np.abs(observed) * (1 - 1e-12)
    done = 0
    while done < n_permutations:
        m = min(chunk, n_permutations - done)
        perms = rng.permuted(np.tile(np.arange(n), (m, 1)), axis=1)[:, :ka]
        sum_a = pooled[perms].sum(axis=1)
        d = sum_a / ka - (total - sum_a) / (n - ka)
        exceed += (np.abs(d) >= thresh).sum(axis=0)
        done += m
    p = (1 + exceed) / (1 + n_permutations)
    if flat:
        return float(observed[0]), float(p[0])
    return observed, p
