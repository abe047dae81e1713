"""Histogram gradient boosting for squared-error regression, grown leaf-wise."""
from __future__ import annotations

import hashlib
import heapq
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import FitError, InputValidationError, SchemaError
from .binning import MAX_BINS_LIMIT, bin_features
from .goss import goss_sample, mix64
from .objective import leaf_weight, regularization, split_gain, squared_loss
from .tree import LEAF, Tree, TreeBuilder


@dataclass(frozen=True)
class GbmParams:
    n_trees: int = 400
    learning_rate: float = 0.05
    num_leaves: int = 31
    min_samples_leaf: int = 20
    lambda_l2: float = 1.0
    gamma: float = 0.0
    max_bins: int = 255
    goss: tuple | None = None
    seed: int = 0
    max_depth: int | None = None

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        # num_leaves=1 is allowed: it forces single-leaf stumps
        if self.num_leaves < 1:
            raise ValueError("num_leaves must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.lambda_l2 < 0 or self.gamma < 0:
            raise ValueError("lambda and gamma must be >= 0")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not 2 <= self.max_bins <= MAX_BINS_LIMIT:
            raise ValueError(f"max_bins must be in [2, {MAX_BINS_LIMIT}]")
        if self.goss is not None:
            a, b = self.goss
            if not (0 < a < 1 and b > 0 and a + b <= 1):
                raise ValueError("goss=(a, b) needs 0 < a < 1, b > 0, a + b <= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_l2")
        d["goss"] = None if self.goss is None else {"a": self.goss[0], "b": self.goss[1]}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GbmParams":
        d = dict(d)
        if "lambda" in d:
            d["lambda_l2"] = d.pop("lambda")
        goss = d.get("goss")
        if isinstance(goss, dict):
            d["goss"] = (goss["a"], goss["b"])
        elif goss is not None:
            d["goss"] = tuple(goss)
        return cls(**d)


@dataclass
class BoostedEnsemble:
    base_score: float
    trees: list
    learning_rate: float
    params: GbmParams
    feature_names: list
    bin_edges: list
    train_objective: list = field(default_factory=list)

    model_type = "gbm"

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    def tree_outputs(self, X) -> np.ndarray:
        """``(n, n_trees)`` matrix of per-tree contributions, learning rate applied."""
        X = _check_predict_input(self, X)
        out = np.empty((len(X), len(self.trees)))
        for m, tree in enumerate(self.trees):
            out[:, m] = self.learning_rate * tree.predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "feature_names": list(self.feature_names),
            "bin_edges": [list(map(float, c)) for c in self.bin_edges],
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BoostedEnsemble":
        return cls(
            base_score=float(doc["base_score"]),
            trees=[Tree.from_dict(t) for t in doc["trees"]],
            learning_rate=float(doc["learning_rate"]),
            params=GbmParams.from_dict(doc["params"]),
            feature_names=list(doc["feature_names"]),
            bin_edges=[np.array(c, dtype=float) for c in doc["bin_edges"]],
        )


def _as_matrix(X):
    """Split a FeatureMatrix-like input into (values, names, ids)."""
    if hasattr(X, "values") and hasattr(X, "names"):
        return np.asarray(X.values, dtype=float), list(X.names), getattr(X, "ids", None)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InputValidationError("X must be two-dimensional")
    return X, None, None


def _check_predict_input(model, X) -> np.ndarray:
    values, names, _ = _as_matrix(X)
    if names is not None and names != list(model.feature_names):
        extra = sorted(set(names) - set(model.feature_names))
        missing = sorted(set(model.feature_names) - set(names))
        raise SchemaError(f"feature columns differ from fit time (missing={missing}, unexpected={extra})")
    if values.shape[1] != len(model.feature_names):
        raise SchemaError(f"expected {len(model.feature_names)} feature columns, got {values.shape[1]}")
    if not np.isfinite(values).all():
        raise InputValidationError("X contains NaN or infinite values")
    return values


def predict(model: BoostedEnsemble, X) -> np.ndarray:
    """``base_score + learning_rate * sum_m f_m(x)``."""
    values = _check_predict_input(model, X)
    out = np.full(len(values), model.base_score)
    for tree in model.trees:
        out += model.learning_rate * tree.predict(values)
    return out


def row_keys(ids) -> np.ndarray:
    """Stable 64-bit keys derived from participant ids."""
    return np.array(
        [int.from_bytes(hashlib.blake2b(str(i).encode(), digest_size=8).digest(), "little") for i in ids],
        dtype=np.uint64,
    )


class _Histograms:
    """Per-feature (G, H, count) histograms via one flat bincount."""

    def __init__(self, binned, n_bins):
        n, p = binned.shape
        self.p, self.nb = p, n_bins
        self.codes = binned.astype(np.intp) + np.arange(p, dtype=np.intp) * n_bins

    def __call__(self, rows, g, h, unit_hessian):
        p, nb = self.p, self.nb
        flat = self.codes[rows].ravel()
        size = p * nb
        G = np.bincount(flat, weights=np.repeat(g[rows], p), minlength=size).reshape(p, nb)
        C = np.bincount(flat, minlength=size).reshape(p, nb).astype(float)
        H = C if unit_hessian else np.bincount(flat, weights=np.repeat(h[rows], p), minlength=size).reshape(p, nb)
        return G, H, C


def _best_split(hist, G, H, C, params):
    """Highest-gain (gain, feature, bin); ties go to the lowest feature then bin."""
    Gh, Hh, Ch = hist
    GL = np.cumsum(Gh, axis=1)[:, :-1]
    HL = np.cumsum(Hh, axis=1)[:, :-1]
    CL = np.cumsum(Ch, axis=1)[:, :-1]
    GR, HR, CR = G - GL, H - HL, C - CL
    msl = params.min_samples_leaf
    valid = (CL >= msl) & (CR >= msl)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = split_gain(GL, HL, GR, HR, params.lambda_l2, params.gamma)
    gain = np.where(valid, gain, -np.inf)
    k = int(np.argmax(gain))
    f, t = divmod(k, gain.shape[1])
    return float(gain[f, t]), f, t


def _grow_tree(binned, hists, g, h, unit_hessian, cuts, params) -> Tree:
    builder = TreeBuilder()
    rows = np.arange(len(g))
    G, H = float(g.sum()), float(h.sum())
    root = builder.add(len(rows), G, H)
    heap = []

    def consider(node, rows, G, H, hist, depth):
        if len(rows) < 2 * params.min_samples_leaf:
            return
        if params.max_depth is not None and depth >= params.max_depth:
            return
        gain, f, t = _best_split(hist, G, H, float(len(rows)), params)
        if gain > 0:
            heapq.heappush(heap, (-gain, node, f, t, rows, hist, depth))

    if params.num_leaves > 1:
        consider(root, rows, G, H, hists(rows, g, h, unit_hessian), 0)
    n_leaves = 1
    while heap and n_leaves < params.num_leaves:
        _, node, f, t, rows, hist, depth = heapq.heappop(heap)
        mask = binned[rows, f] <= t
        lrows, rrows = rows[mask], rows[~mask]
        small, large = (lrows, rrows) if len(lrows) <= len(rrows) else (rrows, lrows)
        h_small = hists(small, g, h, unit_hessian)
        h_large = tuple(a - b for a, b in zip(hist, h_small))
        hl, hr = (h_small, h_large) if small is lrows else (h_large, h_small)
        GL, HL = float(g[lrows].sum()), float(h[lrows].sum())
        GR, HR = float(g[rrows].sum()), float(h[rrows].sum())
        li = builder.add(len(lrows), GL, HL)
        ri = builder.add(len(rrows), GR, HR)
        builder.set_split(node, f, t, cuts[f][t], li, ri)
        n_leaves += 1
        consider(li, lrows, GL, HL, hl, depth + 1)
        consider(ri, rrows, GR, HR, hr, depth + 1)

    tree = builder.build()
    tree.value = np.array([leaf_weight(Gi, Hi, params.lambda_l2) for Gi, Hi in zip(tree.G, tree.H)])
    return tree


def fit(X, y, params: GbmParams = GbmParams(), feature_names=None, ids=None) -> BoostedEnsemble:
    """Fit a boosted ensemble; ``X`` may be a FeatureMatrix or an array."""
    values, names, matrix_ids = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    n = len(values)
    if n == 0:
        raise FitError("cannot fit on empty data")
    if len(y) != n:
        raise FitError(f"X has {n} rows but y has {len(y)}")
    if not np.isfinite(values).all() or not np.isfinite(y).all():
        raise InputValidationError("X or y contains NaN or infinite values")
    if n < 2 * params.min_samples_leaf and params.num_leaves > 1:
        raise FitError(f"need at least {2 * params.min_samples_leaf} rows, got {n}")
    names = names or feature_names or [f"f{j}" for j in range(values.shape[1])]
    ids = matrix_ids if ids is None else ids

    binned, cuts = bin_features(values, params.max_bins)
    n_bins = int(binned.max()) + 1 if binned.size else 1
    hists = _Histograms(binned, max(n_bins, 2))
    base = float(y.mean())
    pred = np.full(n, base)
    keys = row_keys(ids) if ids is not None else None
    trees, history = [], []
    for m in range(params.n_trees):
        g = pred - y
        if params.goss is not None:
            a, b = params.goss
            seed = int(mix64(np.uint64(params.seed) ^ mix64(np.uint64(m))))
            idx, w = goss_sample(g, a, b, seed, keys)
            tree = _grow_tree(binned[idx], _Histograms(binned[idx], max(n_bins, 2)), g[idx] * w, w, False, cuts, params)
        else:
            tree = _grow_tree(binned, hists, g, np.ones(n), True, cuts, params)
        step = params.learning_rate * tree.value[tree.apply_binned(binned)]
        pred = pred + step
        history.append(
            squared_loss(y, pred) + regularization(params.learning_rate * tree.leaf_weights(), params.lambda_l2, params.gamma)
        )
        trees.append(tree)
    return BoostedEnsemble(base, trees, params.learning_rate, params, list(names), cuts, history)
