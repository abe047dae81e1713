"""Benchmark regressors: a bagged CART forest and coordinate-descent ElasticNet."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import FitError, InputValidationError
from .gbm.binning import bin_features
from .gbm.booster import _as_matrix, _check_predict_input
from .gbm.tree import Tree, TreeBuilder

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# random forest
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 300
    max_depth: int | None = None
    min_samples_leaf: int = 5
    feature_subsample: float = 1 / 3
    bootstrap: bool = True
    seed: int = 0
    max_bins: int = 255

    def __post_init__(self):
        if not 0 < self.feature_subsample <= 1:
            raise ValueError("feature_subsample must be in (0, 1]")
        if self.n_trees < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_trees and min_samples_leaf must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class ForestModel:
    trees: list
    params: ForestParams
    feature_names: list

    model_type = "rf"

    def predict(self, X) -> np.ndarray:
        return rf_predict(self, X)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, doc) -> "ForestModel":
        return cls(
            [Tree.from_dict(t) for t in doc["trees"]],
            ForestParams(**doc["params"]),
            list(doc["feature_names"]),
        )


def _validate_xy(values, y):
    if len(values) == 0:
        raise FitError("cannot fit on empty data")
    if len(y) != len(values):
        raise FitError(f"X has {len(values)} rows but y has {len(y)}")
    if not np.isfinite(values).all() or not np.isfinite(y).all():
        raise InputValidationError("X or y contains NaN or infinite values")


def _grow_cart(binned, cuts, y, rows, p: ForestParams, rng) -> Tree:
    """Depth-first variance-reduction tree on bootstrap ``rows``."""
    n_feat = binned.shape[1]
    mtry = max(1, int(round(p.feature_subsample * n_feat)))
    nb = int(binned.max()) + 1 if binned.size else 1
    builder = TreeBuilder()
    root = builder.add(len(rows), 0.0, 0.0, y[rows].mean())
    stack = [(root, rows, 0)]
    while stack:
        node, rows, depth = stack.pop()
        k = len(rows)
        if k < 2 * p.min_samples_leaf or (p.max_depth is not None and depth >= p.max_depth):
            continue
        yr = y[rows]
        if yr.max() == yr.min():
            continue
        feats = np.sort(rng.choice(n_feat, size=mtry, replace=False)) if mtry < n_feat else np.arange(n_feat)
        codes = binned[np.ix_(rows, feats)].astype(np.intp) + np.arange(len(feats)) * nb
        flat = codes.ravel()
        size = len(feats) * nb
        S = np.bincount(flat, weights=np.repeat(yr, len(feats)), minlength=size).reshape(-1, nb)
        C = np.bincount(flat, minlength=size).reshape(-1, nb)
        SL, CL = np.cumsum(S, axis=1)[:, :-1], np.cumsum(C, axis=1)[:, :-1]
        total = yr.sum()
        SR, CR = total - SL, k - CL
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = SL**2 / CL + SR**2 / CR - total**2 / k
        gain = np.where((CL >= p.min_samples_leaf) & (CR >= p.min_samples_leaf), gain, -np.inf)
        best = int(np.argmax(gain))
        fi, t = divmod(best, gain.shape[1])
        # relative guard: float noise on a pure node must not count as a split
        if not gain[fi, t] > 1e-12 * max(1.0, float(yr @ yr)):
            continue
        f = int(feats[fi])
        mask = binned[rows, f] <= t
        lrows, rrows = rows[mask], rows[~mask]
        li = builder.add(len(lrows), 0.0, 0.0, y[lrows].mean())
        ri = builder.add(len(rrows), 0.0, 0.0, y[rrows].mean())
        builder.set_split(node, f, t, cuts[f][t], li, ri)
        stack.append((ri, rrows, depth + 1))
        stack.append((li, lrows, depth + 1))
    return builder.build()


def rf_fit(X, y, p: ForestParams = ForestParams(), feature_names=None) -> ForestModel:
    values, names, _ = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    _validate_xy(values, y)
    names = names or feature_names or [f"f{j}" for j in range(values.shape[1])]
    binned, cuts = bin_features(values, p.max_bins)
    n = len(values)
    trees = []
    for m in range(p.n_trees):
        # one independent stream per tree keeps trees reproducible in isolation
        rng = np.random.default_rng([p.seed, m])
        rows = rng.integers(0, n, size=n) if p.bootstrap else np.arange(n)
        trees.append(_grow_cart(binned, cuts, y, rows, p, rng))
    return ForestModel(trees, p, list(names))


def rf_predict(model: ForestModel, X) -> np.ndarray:
    values = _check_predict_input(model, X)
    out = np.zeros(len(values))
    for tree in model.trees:
        out += tree.predict(values)
    return out / len(model.trees)


# --------------------------------------------------------------------------
# elastic net
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ElasticNetParams:
    alpha: float = 0.1
    l1_ratio: float = 0.5
    max_iter: int = 10_000
    tol: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0 <= self.l1_ratio <= 1:
            raise ValueError("l1_ratio must be in [0, 1]")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class ElasticNetModel:
    """Coefficients on the standardized scale plus the map back to raw units."""

    coef_std: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    params: ElasticNetParams
    feature_names: list
    n_iter: int = 0
    converged: bool = True
    objective_path: list = field(default_factory=list)

    model_type = "enet"

    @property
    def coef(self) -> np.ndarray:
        scale = np.where(self.x_scale > 0, self.x_scale, 1.0)
        return np.where(self.x_scale > 0, self.coef_std / scale, 0.0)

    @property
    def intercept(self) -> float:
        return float(self.y_mean - self.x_mean @ self.coef)

    def predict(self, X) -> np.ndarray:
        return enet_predict(self, X)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "feature_names": list(self.feature_names),
            "coef_std": self.coef_std.tolist(),
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean,
            "n_iter": self.n_iter,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, doc) -> "ElasticNetModel":
        return cls(
            coef_std=np.array(doc["coef_std"], dtype=float),
            x_mean=np.array(doc["x_mean"], dtype=float),
            x_scale=np.array(doc["x_scale"], dtype=float),
            y_mean=float(doc["y_mean"]),
            params=ElasticNetParams(**doc["params"]),
            feature_names=list(doc["feature_names"]),
            n_iter=int(doc.get("n_iter", 0)),
            converged=bool(doc.get("converged", True)),
        )


def soft_threshold(z, gamma):
    return math.copysign(max(abs(z) - gamma, 0.0), z)


def enet_objective(Xs, yc, w, alpha, l1_ratio) -> float:
    r = yc - Xs @ w
    return float(r @ r) / (2 * len(yc)) + alpha * (l1_ratio * np.abs(w).sum() + (1 - l1_ratio) / 2 * float(w @ w))


def enet_fit(X, y, p: ElasticNetParams = ElasticNetParams(), feature_names=None) -> ElasticNetModel:
    """Cyclic coordinate descent on internally standardized features.

    Minimizes ``(1/2n)|y - Xw - b|^2 + alpha (rho |w|_1 + (1 - rho)/2 |w|^2)``
    with an unpenalized intercept; stops when the largest coefficient change
    in a sweep drops below ``tol``.
    """
    values, names, _ = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    _validate_xy(values, y)
    n, n_feat = values.shape
    if n < 2:
        raise FitError("ElasticNet needs at least 2 rows")
    names = names or feature_names or [f"f{j}" for j in range(n_feat)]
    x_mean = values.mean(axis=0)
    x_scale = values.std(axis=0)
    live = x_scale > 0
    Xs = np.zeros_like(values)
    Xs[:, live] = (values[:, live] - x_mean[live]) / x_scale[live]
    y_mean = float(y.mean())
    yc = y - y_mean
    w = np.zeros(n_feat)
    r = yc.copy()
    l1 = p.alpha * p.l1_ratio
    denom = 1.0 + p.alpha * (1 - p.l1_ratio)
    cols = [Xs[:, j] for j in range(n_feat)]
    path = [enet_objective(Xs, yc, w, p.alpha, p.l1_ratio)]
    converged, delta, it = False, math.inf, 0
    for it in range(1, p.max_iter + 1):
        delta = 0.0
        for j in np.flatnonzero(live):
            xj = cols[j]
            old = w[j]
            new = soft_threshold(float(xj @ r) / n + old, l1) / denom
            if new != old:
                r -= xj * (new - old)
                w[j] = new
                delta = max(delta, abs(new - old))
        path.append(enet_objective(Xs, yc, w, p.alpha, p.l1_ratio))
        if delta < p.tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"ElasticNet did not converge in {p.max_iter} sweeps (last max |dw| = {delta:.3g})", RuntimeWarning)
    return ElasticNetModel(w, x_mean, x_scale, y_mean, p, list(names), it, converged, path)


def enet_predict(model: ElasticNetModel, X) -> np.ndarray:
    values = _check_predict_input(model, X)
    return model.intercept + values @ model.coef
