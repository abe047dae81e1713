from __future__ import annotations

import time
import warnings

import numpy as np
import pandas as pd
import pytest

from agevelocity.cohort import CohortTable, Wave, pair_waves
from agevelocity.features import build_temporal_design
from agevelocity.synthgen import default_config, generate_cohort

# acceptance results collected by tests/test_acceptance.py, printed at the end
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def make_wave(rows, wave=Wave.WAVE1, **kwargs) -> CohortTable:
    """Small CohortTable from a list of dicts (id, sex, age_years, collection_date, biomarkers...)."""
    return CohortTable.from_frame(wave, pd.DataFrame(rows), **kwargs)


@pytest.fixture(scope="session")
def small_cohort():
    cfg = default_config(n_female=160, n_male=140, seed=11)
    w1, w2, truth = generate_cohort(cfg)
    return cfg, w1, w2, truth


@pytest.fixture(scope="session")
def small_design(small_cohort):
    _, w1, w2, _ = small_cohort
    return build_temporal_design(pair_waves(w1, w2))


class Timed:
    """Result plus the wall time it took to build."""

    def __init__(self, fn):
        t = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            self.value = fn()
        self.seconds = time.perf_counter() - t


@pytest.fixture(scope="session")
def default_cohort():
    def build():
        w1, w2, truth = generate_cohort(default_config())
        cohort = pair_waves(w1, w2)
        return cohort, build_temporal_design(cohort), truth

    return Timed(build)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
