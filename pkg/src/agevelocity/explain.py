"""Exact SHAP attribution for tree ensembles.

Value function: ``v(S)`` is the tree's expected output when features in ``S``
follow the row and every other split is averaged by training cover. The fast
path is path-dependent TreeSHAP (polynomial in depth) vectorized over rows:
the recursion over the tree is the same for every row, only the per-row
"one fractions" (does the row follow this branch?) differ. The brute-force
path enumerates every subset and applies the Shapley weights directly; it
shares nothing with the fast path except the tree arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ConfigError, ModelIntegrityError
from .gbm.booster import _check_predict_input
from .gbm.tree import LEAF

BRUTE_FORCE_MAX_FEATURES = 15


@dataclass(frozen=True)
class ShapAttribution:
    row_id: object
    phi: np.ndarray
    phi0: float


def _tree_terms(model):
    """(base value, per-tree scale, trees) for any additive tree model."""
    kind = getattr(model, "model_type", None)
    if kind == "gbm":
        return model.base_score, model.learning_rate, model.trees
    if kind == "rf":
        return 0.0, 1.0 / len(model.trees), model.trees
    raise ConfigError(f"SHAP attribution needs a tree model, got {kind!r}")


def _check_covers(tree):
    if (tree.cover <= 0).any():
        raise ModelIntegrityError("tree has a node with zero training cover")


def expected_value(tree, node: int = 0) -> float:
    """Cover-weighted mean output of the subtree at ``node``."""
    if tree.feature[node] == LEAF:
        return float(tree.value[node])
    l, r = tree.left[node], tree.right[node]
    return (tree.cover[l] * expected_value(tree, l) + tree.cover[r] * expected_value(tree, r)) / tree.cover[node]


# --------------------------------------------------------------------------
# fast path
# --------------------------------------------------------------------------


class _Path:
    """Unique-feature path; ``one`` and ``pw`` carry one entry per row."""

    __slots__ = ("feat", "zero", "one", "pw")

    def __init__(self, size, n):
        self.feat = np.full(size, -1, dtype=np.intp)
        self.zero = np.zeros(size)
        self.one = np.zeros((size, n))
        self.pw = np.zeros((size, n))

    def copy(self):
        p = _Path.__new__(_Path)
        p.feat, p.zero, p.one, p.pw = self.feat.copy(), self.zero.copy(), self.one.copy(), self.pw.copy()
        return p

    def extend(self, depth, pz, po, pi):
        self.feat[depth], self.zero[depth], self.one[depth] = pi, pz, po
        self.pw[depth] = 1.0 if depth == 0 else 0.0
        pw = self.pw
        for i in range(depth - 1, -1, -1):
            pw[i + 1] += po * pw[i] * ((i + 1) / (depth + 1))
            pw[i] = pz * pw[i] * ((depth - i) / (depth + 1))

    def unwind(self, depth, k):
        o, z = self.one[k].copy(), self.zero[k]
        hot = o != 0
        o_safe = np.where(hot, o, 1.0)
        nxt = self.pw[depth].copy()
        pw = self.pw
        for i in range(depth - 1, -1, -1):
            tmp = pw[i].copy()
            from_one = nxt * (depth + 1) / ((i + 1) * o_safe)
            from_zero = tmp * (depth + 1) / (z * (depth - i))
            pw[i] = np.where(hot, from_one, from_zero)
            nxt = np.where(hot, tmp - pw[i] * z * (depth - i) / (depth + 1), nxt)
        self.feat[k:depth] = self.feat[k + 1 : depth + 1]
        self.zero[k:depth] = self.zero[k + 1 : depth + 1]
        self.one[k:depth] = self.one[k + 1 : depth + 1]

    def unwound_sum(self, depth, k):
        o, z = self.one[k], self.zero[k]
        hot = o != 0
        o_safe = np.where(hot, o, 1.0)
        nxt = self.pw[depth].copy()
        total_one = np.zeros_like(nxt)
        total_zero = np.zeros_like(nxt)
        for i in range(depth - 1, -1, -1):
            tmp = nxt / ((i + 1) * o_safe)
            total_one += tmp
            nxt = self.pw[i] - tmp * z * (depth - i)
            total_zero += self.pw[i] / (z * (depth - i))
        return np.where(hot, total_one, total_zero) * (depth + 1)


def _tree_shap_rows(tree, X, phi, scale):
    """Add ``scale`` times one tree's SHAP values for every row of ``X`` into ``phi``."""
    n = len(X)
    size = tree.depth() + 2

    def recurse(node, depth, parent, pz, po, pi):
        path = parent.copy()
        path.extend(depth, pz, po, pi)
        if tree.feature[node] == LEAF:
            v = scale * tree.value[node]
            for i in range(1, depth + 1):
                w = path.unwound_sum(depth, i)
                phi[:, path.feat[i]] += w * (path.one[i] - path.zero[i]) * v
            return
        f = tree.feature[node]
        l, r = tree.left[node], tree.right[node]
        cover = tree.cover[node]
        iz, io = 1.0, np.ones(n)
        hit = np.flatnonzero(path.feat[1 : depth + 1] == f)
        if len(hit):
            k = int(hit[0]) + 1
            iz, io = path.zero[k], path.one[k].copy()
            path.unwind(depth, k)
            depth -= 1
        goes_left = X[:, f] < tree.threshold[node]
        recurse(l, depth + 1, path, iz * tree.cover[l] / cover, io * goes_left, f)
        recurse(r, depth + 1, path, iz * tree.cover[r] / cover, io * ~goes_left, f)

    recurse(0, 0, _Path(size, n), 1.0, np.ones(n), -1)


def shap_values(model, X) -> tuple[np.ndarray, float]:
    """``(phi, phi0)``: an ``(n, p)`` attribution matrix and the base value."""
    values = _check_predict_input(model, X)
    base, scale, trees = _tree_terms(model)
    phi = np.zeros(values.shape)
    phi0 = base
    for tree in trees:
        _check_covers(tree)
        phi0 += scale * expected_value(tree)
        if tree.feature[0] != LEAF:
            _tree_shap_rows(tree, values, phi, scale)
    return phi, float(phi0)


def tree_shap(model, X, row_ids=None) -> list[ShapAttribution]:
    phi, phi0 = shap_values(model, X)
    if row_ids is None:
        row_ids = getattr(X, "ids", None)
    if row_ids is None:
        row_ids = range(len(phi))
    return [ShapAttribution(rid, phi[i], phi0) for i, rid in enumerate(row_ids)]


# --------------------------------------------------------------------------
# brute-force oracle
# --------------------------------------------------------------------------


def _subset_values(tree, x, masks) -> np.ndarray:
    """v(S) of one tree for every subset bitmask in ``masks``."""

    def rec(node):
        if tree.feature[node] == LEAF:
            return np.full(len(masks), tree.value[node])
        f = tree.feature[node]
        l, r = tree.left[node], tree.right[node]
        vl, vr = rec(l), rec(r)
        follow = vl if x[f] < tree.threshold[node] else vr
        averaged = (tree.cover[l] * vl + tree.cover[r] * vr) / tree.cover[node]
        return np.where((masks >> f) & 1 == 1, follow, averaged)

    return rec(0)


def brute_force_shap(model, x) -> np.ndarray:
    """Shapley values of one row by enumerating all ``2^p`` feature subsets."""
    x = np.asarray(x, dtype=float).ravel()
    p = len(x)
    if p > BRUTE_FORCE_MAX_FEATURES:
        raise ConfigError(
            f"brute-force SHAP enumerates 2^p subsets; p={p} exceeds {BRUTE_FORCE_MAX_FEATURES}. "
            "Use tree_shap for wide inputs or select a feature subset."
        )
    _check_predict_input(model, x[None, :])
    base, scale, trees = _tree_terms(model)
    masks = np.arange(1 << p, dtype=np.int64)
    v = np.full(len(masks), base, dtype=float)
    for tree in trees:
        _check_covers(tree)
        v += scale * _subset_values(tree, x, masks)
    sizes = np.array([bin(int(m)).count("1") for m in masks])
    fact = [math.factorial(k) for k in range(p + 1)]
    weight = np.array([fact[s] * fact[p - s - 1] / fact[p] if s < p else 0.0 for s in sizes])
    phi = np.empty(p)
    for j in range(p):
        without = masks[(masks >> j) & 1 == 0]
        phi[j] = float(np.sum(weight[without] * (v[without | (1 << j)] - v[without])))
    return phi


# --------------------------------------------------------------------------
# summaries
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ImportanceSummary:
    table: pd.DataFrame  # feature, mean_abs_phi, rank, sign_consistency
    points: pd.DataFrame  # row_id, feature, rank, phi, value

    def top(self, k: int) -> list[str]:
        return list(self.table.sort_values("rank")["feature"].head(k))


def summarize(attrs, feature_names, values=None) -> ImportanceSummary:
    """Rank features by mean |phi| (ties keep feature order) and build plot data."""
    if isinstance(attrs, tuple):
        phi = np.asarray(attrs[0], dtype=float)
        row_ids = list(range(len(phi)))
    else:
        attrs = list(attrs)
        if not attrs:
            raise ValueError("summarize needs at least one attribution")
        phi = np.vstack([a.phi for a in attrs])
        row_ids = [a.row_id for a in attrs]
    n, p = phi.shape
    if n == 0:
        raise ValueError("summarize needs at least one attribution")
    mean_abs = np.abs(phi).mean(axis=0)
    order = np.argsort(-mean_abs, kind="stable")
    rank = np.empty(p, dtype=int)
    rank[order] = np.arange(1, p + 1)
    pos, neg = (phi > 0).sum(axis=0), (phi < 0).sum(axis=0)
    table = pd.DataFrame(
        {
            "feature": list(feature_names),
            "mean_abs_phi": mean_abs,
            "rank": rank,
            "sign_consistency": np.maximum(pos, neg) / n,
        }
    ).sort_values("rank", kind="stable").reset_index(drop=True)
    vals = np.full((n, p), np.nan) if values is None else np.asarray(values, dtype=float)
    points = pd.DataFrame(
        {
            "row_id": np.repeat(np.asarray(row_ids, dtype=object), p),
            "feature": np.tile(np.asarray(feature_names, dtype=object), n),
            "rank": np.tile(rank, n),
            "phi": phi.ravel(),
            "value": vals.ravel(),
        }
    )
    return ImportanceSummary(table, points)
