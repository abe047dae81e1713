from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agevelocity.errors import DegenerateError, FitError, InputValidationError, SchemaError
from agevelocity.gbm import GbmParams, apply_bins, bin_features, fit, goss_sample, leaf_weight, split_gain
from agevelocity.gbm.booster import row_keys
from agevelocity.gbm.objective import regularization, squared_loss


def friedman(n, p, seed, noise=0.5):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, p))
    f = 10 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20 * (X[:, 2] - 0.5) ** 2 + 10 * X[:, 3] + 5 * X[:, 4]
    return X, f + noise * rng.standard_normal(n), f


class TestClosedForms:
    def test_gain_example(self):
        assert split_gain(-4, 2, 4, 2, 1, 0) == pytest.approx(16 / 3, abs=1e-12)

    def test_gain_gamma(self):
        assert split_gain(-4, 2, 4, 2, 1, 5) == pytest.approx(16 / 3 - 5, abs=1e-12)

    @given(G=st.floats(-100, 100), H=st.floats(0, 100), gamma=st.floats(0, 10))
    def test_gain_symmetric_split(self, G, H, gamma):
        # identical halves carry no information: the gain is just the leaf penalty (lambda = 0)
        assert split_gain(G, H + 1, G, H + 1, 0.0, gamma) == pytest.approx(-gamma, abs=1e-9 * (1 + G * G))

    def test_equal_children_with_lambda(self):
        # with lambda > 0 the split is penalised: 1/2 [2 G^2/(H+l) - (2G)^2/(2H+l)] < 0
        assert split_gain(3.0, 2.0, 3.0, 2.0, 1.0, 0.0) == pytest.approx(0.5 * (18 / 3 - 36 / 5), abs=1e-12)

    def test_leaf_weight(self):
        assert leaf_weight(10, 5, 1) == pytest.approx(-10 / 6, abs=1e-12)
        assert leaf_weight(0, 5, 1) == 0

    def test_leaf_weight_shrinks(self):
        w = [abs(leaf_weight(10, 5, lam)) for lam in (0, 1, 10, 100)]
        assert all(a > b for a, b in zip(w, w[1:]))

    def test_leaf_weight_degenerate(self):
        with pytest.raises(DegenerateError):
            leaf_weight(1.0, 0.0, 0.0)

    def test_stump(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(200, 3))
        y = rng.normal(50, 8, size=200)
        p = GbmParams(n_trees=1, num_leaves=1, learning_rate=0.3, lambda_l2=1.0)
        m = fit(X, y, p)
        base = y.mean()
        g = base - y
        expected = base + 0.3 * (-g.sum() / (len(y) + 1.0))
        np.testing.assert_allclose(m.predict(X), expected, rtol=0, atol=1e-12)
        assert m.base_score == pytest.approx(base, abs=1e-12)

    def test_constant_target(self):
        X = np.random.default_rng(1).normal(size=(100, 4))
        y = np.full(100, 42.0)
        m = fit(X, y, GbmParams(n_trees=5, min_samples_leaf=5))
        assert all(np.all(t.leaf_weights() == 0) for t in m.trees)
        assert np.array_equal(m.predict(X), y)


class TestBinning:
    def test_quartiles(self):
        x = np.arange(1, 1001, dtype=float)
        rng = np.random.default_rng(0)
        binned, cuts = bin_features(rng.permutation(x)[:, None], max_bins=4)
        srt = np.sort(x)
        # sort-based oracle: linear-interpolated quantile at k/4
        oracle = [srt[0] + (len(srt) - 1) * k / 4 for k in (1, 2, 3)]
        np.testing.assert_allclose(cuts[0], oracle, atol=1.0)
        counts = np.bincount(binned[:, 0])
        assert len(counts) == 4
        assert np.all(np.abs(counts - 250) <= 1)

    def test_edge_goes_right(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        _, cuts = bin_features(x[:, None], max_bins=4)
        c = cuts[0][1]
        assert apply_bins(np.array([[c]]), cuts)[0, 0] == 2
        assert apply_bins(np.array([[np.nextafter(c, -np.inf)]]), cuts)[0, 0] == 1

    def test_constant_column(self):
        rng = np.random.default_rng(3)
        X = np.column_stack([np.full(300, 7.0), rng.normal(size=300)])
        y = X[:, 1] * 3 + rng.normal(size=300)
        binned, cuts = bin_features(X)
        assert len(cuts[0]) == 0 and np.all(binned[:, 0] == 0)
        m = fit(X, y, GbmParams(n_trees=20, min_samples_leaf=5))
        assert all(0 not in t.used_features() for t in m.trees)

    def test_small_unique_midpoints(self):
        x = np.array([[1.0], [3.0], [3.0], [7.0]])
        _, cuts = bin_features(x, max_bins=255)
        np.testing.assert_array_equal(cuts[0], [2.0, 5.0])

    def test_bad_max_bins(self):
        with pytest.raises(ValueError):
            bin_features(np.zeros((3, 1)), max_bins=1)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), bins=st.integers(2, 255))
    def test_bins_monotone(self, seed, bins):
        x = np.random.default_rng(seed).normal(size=500)
        b, _ = bin_features(x[:, None], bins)
        order = np.argsort(x)
        assert np.all(np.diff(b[order, 0].astype(int)) >= 0)
        assert b.max() < bins


class TestGoss:
    def test_counts_and_weights(self):
        g = np.random.default_rng(0).normal(size=100)
        idx, w = goss_sample(g, 0.2, 0.1, seed=5)
        assert len(idx) == 30
        top = np.argsort(-np.abs(g), kind="stable")[:20]
        assert set(top) <= set(idx)
        assert np.sum(w == 1.0) == 20
        assert np.allclose(w[w != 1.0], 8.0)
        assert np.all(np.diff(idx) > 0)

    def test_keep_all(self):
        g = np.random.default_rng(0).normal(size=50)
        idx, w = goss_sample(g, 0.2, 0.8, seed=1)
        assert np.array_equal(idx, np.arange(50))
        assert np.allclose(w, 1.0)

    def test_unbiased(self):
        g = np.random.default_rng(42).normal(1.0, 3.0, size=400)
        est = []
        for seed in range(200):
            idx, w = goss_sample(g, 0.2, 0.1, seed)
            est.append(np.sum(g[idx] * w))
        est = np.array(est)
        se = est.std(ddof=1) / np.sqrt(len(est))
        assert abs(est.mean() - g.sum()) < 3 * se

    def test_permutation_follows_keys(self):
        rng = np.random.default_rng(7)
        g = rng.normal(size=120)
        keys = row_keys([f"id{i}" for i in range(120)])
        idx, w = goss_sample(g, 0.3, 0.2, 11, keys)
        perm = rng.permutation(120)
        idx2, w2 = goss_sample(g[perm], 0.3, 0.2, 11, keys[perm])
        chosen = dict(zip(keys[idx].tolist(), w))
        assert dict(zip(keys[perm][idx2].tolist(), w2)) == chosen

    def test_invalid(self):
        with pytest.raises(ValueError):
            goss_sample(np.ones(10), 0.6, 0.5, 0)


class TestBooster:
    def test_zero_trees(self):
        X, y, _ = friedman(100, 5, 0)
        m = fit(X, y, GbmParams(n_trees=0))
        assert np.array_equal(m.predict(X), np.full(100, y.mean()))

    def test_single_leaf_tree(self):
        X, y, _ = friedman(100, 5, 0)
        m = fit(X, y, GbmParams(n_trees=1, num_leaves=1, learning_rate=0.5))
        w = m.trees[0].value[0]
        np.testing.assert_allclose(m.predict(X), m.base_score + 0.5 * w, atol=1e-12)

    def test_additive_decomposition(self):
        X, y, _ = friedman(400, 6, 1)
        m = fit(X, y, GbmParams(n_trees=30, num_leaves=8, min_samples_leaf=5))
        Xn = np.random.default_rng(9).uniform(-0.2, 1.2, size=(50, 6))
        parts = m.tree_outputs(Xn)
        manual = m.base_score + sum(m.learning_rate * t.predict(Xn) for t in m.trees)
        np.testing.assert_allclose(m.predict(Xn), m.base_score + parts.sum(axis=1), atol=1e-10)
        np.testing.assert_allclose(m.predict(Xn), manual, atol=1e-10)

    def test_objective_non_increasing(self):
        X, y, _ = friedman(500, 5, 2)
        m = fit(X, y, GbmParams(n_trees=30, learning_rate=1.0, num_leaves=15, min_samples_leaf=5))
        obj = [squared_loss(y, np.full(len(y), y.mean()))] + m.train_objective
        assert all(b <= a + 1e-9 * abs(a) for a, b in zip(obj, obj[1:]))

    def test_objective_history_matches_definition(self):
        X, y, _ = friedman(300, 5, 3)
        p = GbmParams(n_trees=3, learning_rate=1.0, num_leaves=4, min_samples_leaf=5, lambda_l2=2.0, gamma=0.5)
        m = fit(X, y, p)
        pred = m.base_score + np.cumsum(m.tree_outputs(X), axis=1)
        for k, t in enumerate(m.trees):
            want = squared_loss(y, pred[:, k]) + regularization(t.leaf_weights(), 2.0, 0.5)
            assert m.train_objective[k] == pytest.approx(want, rel=1e-12)

    def test_leaf_budget_and_min_samples(self):
        X, y, _ = friedman(600, 5, 4)
        m = fit(X, y, GbmParams(n_trees=10, num_leaves=7, min_samples_leaf=30))
        for t in m.trees:
            assert t.n_leaves <= 7
            assert t.cover[t.is_leaf].min() >= 30

    def test_max_depth(self):
        X, y, _ = friedman(600, 5, 4)
        m = fit(X, y, GbmParams(n_trees=5, num_leaves=31, min_samples_leaf=5, max_depth=2))
        assert max(t.depth() for t in m.trees) <= 2

    def test_best_split_matches_cart(self):
        # one tree, two leaves, lambda 0, lr 1 == best variance-reduction split
        rng = np.random.default_rng(5)
        X = rng.integers(0, 40, size=(200, 3)).astype(float)
        y = np.where(X[:, 1] > 17, 5.0, -2.0) + rng.normal(size=200)
        m = fit(X, y, GbmParams(n_trees=1, num_leaves=2, learning_rate=1.0, lambda_l2=0.0, min_samples_leaf=1))
        best = (-np.inf, None, None)
        for j in range(3):
            vals = np.unique(X[:, j])
            for a, b in zip(vals[:-1], vals[1:]):
                thr = (a + b) / 2
                left = X[:, j] < thr
                sse = ((y[left] - y[left].mean()) ** 2).sum() + ((y[~left] - y[~left].mean()) ** 2).sum()
                red = ((y - y.mean()) ** 2).sum() - sse
                if red > best[0] + 1e-9:
                    best = (red, j, thr)
        t = m.trees[0]
        assert (t.feature[0], t.threshold[0]) == (best[1], best[2])
        left = X[:, best[1]] < best[2]
        np.testing.assert_allclose(m.predict(X[left]), y[left].mean(), atol=1e-10)
        np.testing.assert_allclose(m.predict(X[~left]), y[~left].mean(), atol=1e-10)

    def test_deterministic_with_goss(self):
        X, y, _ = friedman(500, 5, 6)
        p = GbmParams(n_trees=20, num_leaves=8, min_samples_leaf=5, goss=(0.2, 0.1), seed=3)
        a, b = fit(X, y, p), fit(X, y, p)
        assert np.array_equal(a.predict(X), b.predict(X))
        c = fit(X, y, GbmParams(n_trees=20, num_leaves=8, min_samples_leaf=5, goss=(0.2, 0.1), seed=4))
        assert not np.array_equal(a.predict(X), c.predict(X))

    def test_row_order_invariant(self):
        X, y, _ = friedman(400, 5, 8)
        ids = [f"r{i}" for i in range(400)]
        p = GbmParams(n_trees=15, num_leaves=8, min_samples_leaf=5, goss=(0.3, 0.2), seed=1)
        a = fit(X, y, p, ids=ids)
        perm = np.random.default_rng(0).permutation(400)
        b = fit(X[perm], y[perm], p, ids=[ids[i] for i in perm])
        np.testing.assert_allclose(a.predict(X), b.predict(X), atol=1e-9)

    def test_fit_quality(self):
        X, y, _ = friedman(2000, 10, 11)
        Xt, _, ft = friedman(1000, 10, 12)
        m = fit(X, y, GbmParams())
        r2 = 1 - np.sum((ft - m.predict(Xt)) ** 2) / np.sum((ft - ft.mean()) ** 2)
        assert r2 >= 0.85


class TestErrors:
    def test_predict_wrong_width(self):
        X, y, _ = friedman(100, 5, 0)
        m = fit(X, y, GbmParams(n_trees=2, min_samples_leaf=5))
        with pytest.raises(SchemaError):
            m.predict(X[:, :4])

    def test_predict_nan(self):
        X, y, _ = friedman(100, 5, 0)
        m = fit(X, y, GbmParams(n_trees=2, min_samples_leaf=5))
        X = X.copy()
        X[3, 2] = np.nan
        with pytest.raises(InputValidationError):
            m.predict(X)

    def test_fit_errors(self):
        with pytest.raises(FitError):
            fit(np.empty((0, 3)), np.empty(0))
        with pytest.raises(FitError):
            fit(np.zeros((10, 2)), np.zeros(9))
        with pytest.raises(FitError):
            fit(np.zeros((10, 2)), np.zeros(10), GbmParams(min_samples_leaf=20))
        with pytest.raises(InputValidationError):
            fit(np.array([[np.inf]] * 50), np.zeros(50), GbmParams(min_samples_leaf=5))

    @pytest.mark.parametrize(
        "kw", [{"n_trees": -1}, {"learning_rate": 0}, {"num_leaves": 0}, {"lambda_l2": -1}, {"goss": (0.5, 0.6)}]
    )
    def test_bad_params(self, kw):
        with pytest.raises(ValueError):
            GbmParams(**kw)
