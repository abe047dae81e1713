from __future__ import annotations

from datetime import date

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agevelocity.cohort import (
    Wave,
    apply_exclusions,
    elapsed_years,
    load_wave,
    pair_waves,
    write_wave,
)
from agevelocity.errors import (
    ChronologyError,
    ConfigError,
    DuplicationError,
    EmptyCohortError,
    ParseError,
    SchemaError,
)

from conftest import make_wave

CSV3 = """id,sex,age_years,collection_date,bmi,hba1c
P001,F,45.2,2019-03-01,24.1,5.4
P002,M,61.0,2019-07-15,28.3,
P003,F,52.5,2020-01-10,22.0,5.9
"""


def _rows(ids, wave=1, flags=None, day="2019-06-01"):
    if wave == 2:
        day = "2021-06-01"
    rows = []
    for k, pid in enumerate(ids):
        r = {"id": pid, "sex": "FM"[sum(map(ord, pid)) % 2], "age_years": 50.0 + k, "collection_date": day}
        if flags is not None:
            r["excl_active_cancer"] = flags[k]
        r["bmi"] = 25.0 + k
        rows.append(r)
    return rows


def _pair(ids, flags=None):
    w1 = make_wave(_rows(ids, 1, flags))
    w2 = make_wave(_rows(ids, 2, flags), Wave.WAVE2)
    return pair_waves(w1, w2)


class TestLoadWave:
    def test_three_rows(self, tmp_path):
        p = tmp_path / "w1.csv"
        p.write_text(CSV3)
        t = load_wave(p, "Wave1")
        assert len(t) == 3
        assert t.ids == ["P001", "P002", "P003"]
        assert t.biomarker_names == ["bmi", "hba1c"]

    def test_empty_cell_is_missing(self, tmp_path):
        p = tmp_path / "w1.csv"
        p.write_text(CSV3)
        rec = load_wave(p, Wave.WAVE1).record("P002")
        assert rec.biomarkers["hba1c"] is None
        assert rec.biomarkers["bmi"] == 28.3
        assert rec.collection_date == date(2019, 7, 15)

    def test_duplicate_id_named(self, tmp_path):
        p = tmp_path / "w1.csv"
        p.write_text(CSV3 + "P001,F,47.0,2019-05-01,23.0,5.1\n")
        with pytest.raises(DuplicationError, match="P001"):
            load_wave(p, "Wave1")

    def test_bad_sex(self, tmp_path):
        p = tmp_path / "w1.csv"
        p.write_text(CSV3.replace("P003,F", "P003,X"))
        with pytest.raises(SchemaError):
            load_wave(p, "Wave1")

    def test_date_outside_wave_window(self, tmp_path):
        p = tmp_path / "w2.csv"
        p.write_text(CSV3)
        with pytest.raises((ChronologyError, SchemaError)):
            load_wave(p, "Wave2")

    def test_non_numeric_cell(self, tmp_path):
        p = tmp_path / "w1.csv"
        p.write_text(CSV3.replace("24.1", "abc"))
        with pytest.raises(ParseError):
            load_wave(p, "Wave1")

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError):
            load_wave(tmp_path / "nope.csv", "Wave1")

    def test_bad_header(self, tmp_path):
        p = tmp_path / "w1.csv"
        p.write_text(CSV3.replace("id,sex", "pid,sex"))
        with pytest.raises(SchemaError):
            load_wave(p, "Wave1")

    def test_round_trip(self, tmp_path, small_cohort):
        _, w1, _, _ = small_cohort
        p = tmp_path / "w1.csv"
        write_wave(w1, p)
        back = load_wave(p, "Wave1")
        pd.testing.assert_frame_equal(back.frame, w1.frame, check_exact=True)


class TestPairing:
    def test_intersection_and_drops(self):
        w1 = make_wave(_rows(["A", "B", "C"]))
        w2 = make_wave(_rows(["B", "C", "D"], 2), Wave.WAVE2)
        c = pair_waves(w1, w2)
        assert sorted(c.ids) == ["B", "C"]
        assert c.log["n_pairs"] == 2
        assert c.log["dropped_wave1_only"] == ["A"]
        assert c.log["dropped_wave2_only"] == ["D"]

    def test_elapsed_two_years(self):
        assert elapsed_years(date(2019, 6, 1), date(2021, 6, 1)) == pytest.approx(2.0, abs=1 / 365.25)
        c = _pair(["A"])
        assert c.elapsed_years.iloc[0] == pytest.approx(2.0, abs=1 / 365.25)

    def test_no_overlap(self):
        w1 = make_wave(_rows(["A"]))
        w2 = make_wave(_rows(["B"], 2), Wave.WAVE2)
        with pytest.raises(EmptyCohortError):
            pair_waves(w1, w2)

    def test_wrong_wave_order(self):
        w1 = make_wave(_rows(["A"]))
        with pytest.raises(SchemaError):
            pair_waves(w1, w1)

    def test_default_cohort_size(self, small_cohort):
        cfg, w1, w2, _ = small_cohort
        assert len(pair_waves(w1, w2)) == cfg.n_female + cfg.n_male

    @settings(max_examples=40, deadline=None)
    @given(
        a=st.sets(st.integers(0, 30), min_size=1, max_size=15),
        b=st.sets(st.integers(0, 30), min_size=1, max_size=15),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_intersection_regardless_of_order(self, a, b, seed):
        if not a & b:
            return
        rng = np.random.default_rng(seed)
        ia = [f"P{i:02d}" for i in rng.permutation(sorted(a))]
        ib = [f"P{i:02d}" for i in rng.permutation(sorted(b))]
        c = pair_waves(make_wave(_rows(ia)), make_wave(_rows(ib, 2), Wave.WAVE2))
        assert set(c.ids) == {f"P{i:02d}" for i in a & b}
        assert list(c.wave1.frame.index) == list(c.wave2.frame.index)


class TestExclusions:
    def test_one_of_ten(self):
        flags = [False] * 10
        flags[3] = True
        c = apply_exclusions(_pair([f"P{i}" for i in range(10)], flags), ["active_cancer"])
        assert len(c) == 9
        assert "P3" not in c.ids
        assert c.log["excluded"] == {"active_cancer": 1}

    def test_empty_criteria_identity(self):
        c = _pair([f"P{i}" for i in range(10)], [True] + [False] * 9)
        out = apply_exclusions(c, [])
        assert out.ids == c.ids
        pd.testing.assert_frame_equal(out.wave1.frame, c.wave1.frame)

    def test_all_flagged(self):
        c = _pair([f"P{i}" for i in range(4)], [True] * 4)
        with pytest.raises(EmptyCohortError):
            apply_exclusions(c, ["active_cancer"])

    def test_unknown_criterion(self):
        c = _pair(["A", "B"], [False, False])
        with pytest.raises(ConfigError):
            apply_exclusions(c, ["esrd"])

    def test_input_not_mutated(self):
        c = _pair([f"P{i}" for i in range(5)], [True, False, False, False, False])
        before = c.wave1.frame.copy()
        apply_exclusions(c, ["active_cancer"])
        pd.testing.assert_frame_equal(c.wave1.frame, before)
        assert len(c) == 5
