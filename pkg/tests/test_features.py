from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from agevelocity.cohort import Wave, pair_waves
from agevelocity.errors import (
    AlignmentError,
    ChronologyError,
    ConfigError,
    SchemaError,
    UnimputableColumnError,
)
from agevelocity.features import (
    SYSTEM_TAGS,
    FeatureMatrix,
    build_temporal_design,
    compute_slope,
    compute_slopes,
    impute_sex_median,
    interaction_features,
    sex_medians,
)

from conftest import make_wave

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def _table(sexes, **cols):
    rows = []
    for i, s in enumerate(sexes):
        r = {"id": f"P{i}", "sex": s, "age_years": 50.0, "collection_date": "2019-06-01"}
        for name, vals in cols.items():
            r[name] = vals[i]
        rows.append(r)
    return make_wave(rows)


# --------------------------------------------------------------------------
# imputation
# --------------------------------------------------------------------------


class TestImputation:
    def test_single_sex_median(self):
        t = _table("FFF", x=[1.0, None, 3.0])
        out, log = impute_sex_median(t)
        assert out.frame["x"].tolist() == [1.0, 2.0, 3.0]
        assert [(e.column, e.sex, e.median, e.count) for e in log] == [("x", "F", 2.0, 1)]

    def test_sex_stratified(self):
        t = _table("FFFMMM", x=[None, 10.0, 20.0, 30.0, 40.0, None])
        out, _ = impute_sex_median(t)
        assert out.frame["x"].iloc[0] == 15.0
        assert out.frame["x"].iloc[5] == 35.0

    def test_no_gaps_identity(self):
        t = _table("FM", x=[1.0, 2.0])
        out, log = impute_sex_median(t)
        assert log == []
        pd.testing.assert_frame_equal(out.frame, t.frame)

    def test_unimputable(self):
        t = _table("FFM", x=[1.0, 2.0, None])
        with pytest.raises(UnimputableColumnError):
            impute_sex_median(t)

    def test_external_medians(self):
        t = _table("FM", x=[None, None])
        out, _ = impute_sex_median(t, {("F", "x"): 7.0, ("M", "x"): 9.0})
        assert out.frame["x"].tolist() == [7.0, 9.0]

    def test_input_untouched(self):
        t = _table("FF", x=[None, 4.0])
        impute_sex_median(t)
        assert math.isnan(t.frame["x"].iloc[0])

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), rate=st.floats(0.0, 0.6))
    def test_observed_cells_kept_and_gaps_filled(self, seed, rate):
        rng = np.random.default_rng(seed)
        n, p = 40, 5
        sexes = "".join(rng.choice(list("FM"), n))
        vals = rng.normal(size=(n, p))
        mask = rng.random((n, p)) < rate
        # every (sex, column) keeps at least one observed value
        for s in "FM":
            rows = np.flatnonzero(np.array(list(sexes)) == s)
            if len(rows):
                mask[rows[0]] = False
        data = np.where(mask, np.nan, vals)
        t = _table(sexes, **{f"c{j}": list(data[:, j]) for j in range(p)})
        out, _ = impute_sex_median(t)
        got = out.frame[t.biomarker_names].to_numpy()
        assert not np.isnan(got).any()
        assert np.array_equal(got[~mask].view(np.uint64), data[~mask].view(np.uint64))
        med = sex_medians(t)
        sex_arr = np.array(list(sexes))
        for i, j in zip(*np.nonzero(mask)):
            assert got[i, j] == med[(sex_arr[i], f"c{j}")]


# --------------------------------------------------------------------------
# slopes and interactions
# --------------------------------------------------------------------------


class TestSlopes:
    def test_example(self):
        assert compute_slope(80.0, 84.0, 0.0, 2.0) == 2.0

    @given(y=finite, t1=finite, dt=st.floats(1e-3, 100))
    def test_flat(self, y, t1, dt):
        assert compute_slope(y, y, t1, t1 + dt) == 0.0

    def test_missing(self):
        assert compute_slope(None, 84.0, 0.0, 2.0) is None
        assert compute_slope(80.0, math.nan, 0.0, 2.0) is None

    def test_chronology(self):
        with pytest.raises(ChronologyError):
            compute_slope(1.0, 2.0, 2.0, 2.0)

    @settings(max_examples=200)
    @given(y1=finite, y2=finite, t1=st.floats(-100, 100), dt=st.floats(1e-2, 50), c=st.floats(-100, 100))
    def test_antisymmetry_and_linearity(self, y1, y2, t1, dt, c):
        t2 = t1 + dt
        assume(t2 > t1)
        s = compute_slope(y1, y2, t1, t2)
        assert s == (y2 - y1) / (t2 - t1)
        assert compute_slope(y2, y1, t1, t2) == -s
        # scaling by a power of two is exact in floating point
        assert compute_slope(4 * y1, 4 * y2, t1, t2) == 4 * s
        shifted = compute_slope(y1 + c, y2 + c, t1, t2)
        assert shifted == pytest.approx(s, abs=4e-16 * (abs(y1) + abs(y2) + abs(c)) / dt + 1e-300)

    def _cohort(self):
        rows1, rows2 = [], []
        for pid, sex, b1, b2, h1, h2 in [("A", "F", 20.0, 22.0, 5.0, 5.4), ("B", "M", 30.0, 29.0, 6.0, None)]:
            rows1.append({"id": pid, "sex": sex, "age_years": 50.0, "collection_date": "2019-06-01", "bmi": b1, "hba1c": h1})
            rows2.append({"id": pid, "sex": sex, "age_years": 52.0, "collection_date": "2021-06-01", "bmi": b2, "hba1c": h2})
        return pair_waves(make_wave(rows1), make_wave(rows2, Wave.WAVE2))

    def test_table(self):
        c = self._cohort()
        s = compute_slopes(c, ["bmi", "hba1c"])
        assert list(s.columns) == ["bmi_slope", "hba1c_slope"]
        assert np.isfinite(s["bmi_slope"]).all()
        assert np.isnan(s.loc["B", "hba1c_slope"])
        assert s.loc["A", "bmi_slope"] == pytest.approx(2.0 / c.elapsed_years["A"])

    def test_empty_columns(self):
        s = compute_slopes(self._cohort(), [])
        assert s.shape == (2, 0)
        assert list(s.index) == ["A", "B"]

    def test_unknown_column(self):
        with pytest.raises(ConfigError):
            compute_slopes(self._cohort(), ["ldl"])


def test_interactions():
    assert interaction_features(25.0, 120.0, 1.0) == (3000.0, 1.0)
    assert interaction_features(25.0, 120.0, 0.9)[1] == pytest.approx(0.81, abs=1e-15)
    a, b = interaction_features(np.array([20.0, 30.0]), np.array([100.0, 110.0]), np.array([0.8, 1.1]))
    np.testing.assert_allclose(a, [2000.0, 3300.0])
    np.testing.assert_allclose(b, [0.64, 1.21])


# --------------------------------------------------------------------------
# design matrix
# --------------------------------------------------------------------------


class TestDesign:
    def test_column_order(self, small_design, small_cohort):
        _, w1, _, _ = small_cohort
        m = small_design.train
        assert m.shape[1] == 30
        names = w1.biomarker_names
        assert m.names == names + ["bmi_bp_interaction", "whr_squared"] + [n + "_slope" for n in names]
        assert [c.kind for c in m.columns] == ["baseline"] * 14 + ["interaction"] * 2 + ["slope"] * 14
        assert {c.system_tag for c in m.columns} <= set(SYSTEM_TAGS)
        assert small_design.test.names == m.names

    def test_shared_slopes_and_ids(self, small_design):
        tr, te = small_design.train, small_design.test
        assert np.array_equal(tr.ids, te.ids)
        s_tr = tr.select_kinds(["slope"]).values
        assert np.array_equal(s_tr, te.select_kinds(["slope"]).values)
        assert np.all(te.target > tr.target)

    def test_no_missing_values(self, small_design):
        assert np.isfinite(small_design.train.values).all()
        assert np.isfinite(small_design.test.values).all()

    def test_slope_fill_by_independent_scan(self, small_design):
        raw = small_design.slopes
        tr = small_design.train
        sex = pd.Series(tr.sex, index=tr.ids)
        checked = 0
        for col in raw.columns:
            j = tr.names.index(col)
            for pid in raw.index[raw[col].isna()]:
                pool = [v for i, v in raw[col].items() if sex[i] == sex[pid] and not math.isnan(v)]
                pool.sort()
                k = len(pool)
                oracle = pool[k // 2] if k % 2 else (pool[k // 2 - 1] + pool[k // 2]) / 2
                row = int(np.flatnonzero(tr.ids == pid)[0])
                assert tr.values[row, j] == pytest.approx(oracle, rel=1e-15)
                checked += 1
        assert checked > 0

    def test_drop_policy(self, small_cohort):
        _, w1, w2, _ = small_cohort
        d = build_temporal_design(pair_waves(w1, w2), policy="drop")
        missing = d.slopes.index[d.slopes.isna().any(axis=1)]
        assert len(missing) > 0
        assert not set(missing) & set(d.train.ids)
        assert len(d.train) == len(d.slopes) - len(missing)

    def test_bad_policy(self, small_cohort):
        _, w1, w2, _ = small_cohort
        with pytest.raises(ConfigError):
            build_temporal_design(pair_waves(w1, w2), policy="zero")

    def test_slope_subset(self, small_cohort):
        _, w1, w2, _ = small_cohort
        d = build_temporal_design(pair_waves(w1, w2), slope_columns=["bmi", "sitting_blood_pressure_systolic"])
        assert d.train.shape[1] == 14 + 2 + 2

    def test_wave2_filled_with_wave1_medians(self, small_cohort, small_design):
        _, w1, w2, _ = small_cohort
        med = sex_medians(w1)
        te = small_design.test
        for name in w2.biomarker_names:
            gaps = w2.frame.index[w2.frame[name].isna()]
            j = te.names.index(name)
            for pid in gaps:
                row = int(np.flatnonzero(te.ids == pid)[0])
                assert te.values[row, j] == med[(w2.frame.loc[pid, "sex"], name)]


class TestFeatureMatrix:
    def test_csv_round_trip(self, small_design, tmp_path):
        m = small_design.train
        m.to_csv(tmp_path / "f.csv")
        back = FeatureMatrix.from_csv(tmp_path / "f.csv")
        assert back.columns == m.columns
        assert np.array_equal(back.values, m.values)
        assert np.array_equal(back.target, m.target)
        assert list(back.ids) == list(m.ids)
        assert list(back.sex) == list(m.sex)

    def test_select_and_align(self, small_design):
        m = small_design.train
        sub = m.select(["bmi_slope", "bmi"])
        assert sub.names == ["bmi_slope", "bmi"]
        shuffled = m.take(np.random.default_rng(0).permutation(len(m)))
        back = shuffled.align_to(m)
        assert np.array_equal(back.values, m.values)
        with pytest.raises(SchemaError):
            m.select(["nope"])
        with pytest.raises(AlignmentError):
            m.take(np.arange(5)).align_to(m)

    def test_for_sex(self, small_design):
        m = small_design.train
        f, male = m.for_sex("F"), m.for_sex("M")
        assert len(f) + len(male) == len(m)
        assert set(f.sex) == {"F"}
