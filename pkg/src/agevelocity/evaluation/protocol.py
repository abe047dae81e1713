"""Temporal validation: fit on wave 1, score on wave 2 with the same slopes."""
from __future__ import annotations

import logging
import warnings
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import AlignmentError
from ..features import FeatureMatrix
from ..models import ModelSpec
from .metrics import r2, rmse

log = logging.getLogger(__name__)

TRAIN_WAVE = "Wave1"
TEST_WAVE = "Wave2"
MIN_STRATUM = 50


@dataclass(frozen=True)
class EvaluationReport:
    sex: str
    wave: str
    r2: float
    rmse: float
    n: int
    model: str
    stratum: str | None = None

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("report needs n > 0")
        if self.rmse < 0 or self.r2 > 1:
            raise ValueError("rmse must be >= 0 and r2 <= 1")

    def to_dict(self):
        return asdict(self)


class TargetVault:
    """Holds the wave-2 ages; counts every read made while a fit is running."""

    def __init__(self, target):
        self._target = np.asarray(target, dtype=float).copy()
        self._fitting = False
        self.reads = 0
        self.reads_during_fit = 0

    @contextmanager
    def fitting(self):
        self._fitting = True
        try:
            yield
        finally:
            self._fitting = False

    def reveal(self, rows=None) -> np.ndarray:
        self.reads += 1
        if self._fitting:
            self.reads_during_fit += 1
        return self._target if rows is None else self._target[rows]


@dataclass
class TemporalResult:
    reports: list
    models: dict
    predictions: dict  # wave -> array aligned with the train matrix rows
    audit: dict
    ids: np.ndarray = field(default_factory=lambda: np.empty(0))

    def report(self, sex, wave):
        for r in self.reports:
            if r.sex == sex and r.wave == wave:
                return r
        raise KeyError((sex, wave))


def check_schema(train: FeatureMatrix, test: FeatureMatrix) -> FeatureMatrix:
    """Return ``test`` reordered to the train rows; reject column drift."""
    if train.names != test.names:
        extra = sorted(set(test.names) - set(train.names))
        missing = sorted(set(train.names) - set(test.names))
        raise AlignmentError(f"feature schema differs between waves (missing={missing}, unexpected={extra})")
    if len(train.ids) != len(test.ids) or not np.array_equal(train.ids, test.ids):
        test = test.align_to(train)
    return test


def _groups(train, per_sex, sexes):
    if not per_sex:
        return {"both": np.arange(len(train))}
    return {s: np.flatnonzero(train.sex == s) for s in sexes}


def temporal_evaluate(
    train: FeatureMatrix,
    test: FeatureMatrix,
    spec: ModelSpec = ModelSpec(),
    per_sex: bool = True,
    sexes=("F", "M"),
    models: dict | None = None,
    stratum: str | None = None,
    label: str | None = None,
) -> TemporalResult:
    """Fit per sex on wave-1 features, report R^2/RMSE on both waves.

    The wave-2 target is moved into a :class:`TargetVault` before any model
    is fitted; ``audit['wave2_target_reads_during_fit']`` must be 0. Pass
    ``models`` (sex -> fitted model) to score previously fitted models.
    """
    test = check_schema(train, test)
    vault = TargetVault(test.target)
    test_x = FeatureMatrix(test.ids, test.sex, test.values, test.columns, np.full(len(test), np.nan))
    label = label or spec.kind
    fitted = dict(models or {})
    reports = []
    pred_train = np.full(len(train), np.nan)
    pred_test = np.full(len(train), np.nan)
    for sex, rows in _groups(train, per_sex, sexes).items():
        if len(rows) == 0:
            warnings.warn(f"no rows for sex {sex}; skipped", RuntimeWarning)
            continue
        tr = train.take(rows)
        if sex not in fitted:
            with vault.fitting():
                fitted[sex] = spec.fit(tr, tr.target)
        model = fitted[sex]
        pred_train[rows] = model.predict(tr)
        pred_test[rows] = model.predict(test_x.take(rows))
        y_test = vault.reveal(rows)
        reports.append(EvaluationReport(sex, TRAIN_WAVE, r2(tr.target, pred_train[rows]), rmse(tr.target, pred_train[rows]), len(rows), label, stratum))
        reports.append(EvaluationReport(sex, TEST_WAVE, r2(y_test, pred_test[rows]), rmse(y_test, pred_test[rows]), len(rows), label, stratum))
    audit = {"wave2_target_reads_during_fit": vault.reads_during_fit, "wave2_target_reads": vault.reads}
    return TemporalResult(reports, fitted, {TRAIN_WAVE: pred_train, TEST_WAVE: pred_test}, audit, train.ids)


def reports_to_nested(reports) -> dict:
    """``{model: {sex: {wave: {r2, rmse, n}}}}``, with strata nested under the model."""
    out: dict = {}
    for r in reports:
        key = r.model if r.stratum is None else f"{r.model}[{r.stratum}]"
        out.setdefault(key, {}).setdefault(r.sex, {})[r.wave] = {"r2": r.r2, "rmse": r.rmse, "n": r.n}
    return out


def format_reports(reports) -> str:
    lines = [f"{'model':<16}{'stratum':<20}{'sex':<6}{'wave':<8}{'R2':>9}{'RMSE':>9}{'n':>7}"]
    for r in sorted(reports, key=lambda r: (r.model, r.stratum or "", r.sex, r.wave)):
        lines.append(f"{r.model:<16}{(r.stratum or '-'):<20}{r.sex:<6}{r.wave:<8}{r.r2:>+9.3f}{r.rmse:>9.2f}{r.n:>7d}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# subgroups
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Stratifier:
    """Cut a baseline quantity into lower-inclusive bins ``[e_k, e_{k+1})``."""

    name: str
    source: str  # "age" (wave-1 chronological age) or a feature column name
    edges: tuple
    labels: tuple

    def __post_init__(self):
        if len(self.labels) != len(self.edges) + 1:
            raise ValueError("need exactly one more label than edges")

    def assign(self, train: FeatureMatrix) -> np.ndarray:
        if self.source == "age":
            values = train.target
        else:
            values = train.select([self.source]).values[:, 0]
        return np.digitize(values, np.asarray(self.edges, dtype=float), right=False)


STRATIFIERS = {
    "age": Stratifier("age", "age", (55.0,), ("under_55", "55_and_over")),
    "bmi": Stratifier("bmi", "bmi", (25.0, 30.0), ("normal_lt25", "overweight_25_30", "obese_ge30")),
    "none": Stratifier("none", "age", (), ("all",)),
}


@dataclass
class SubgroupResult:
    reports: list
    sizes: dict  # (stratum, sex) -> n, including skipped strata
    skipped: list
    audit: dict


def subgroup_eval(
    train: FeatureMatrix,
    test: FeatureMatrix,
    stratifier: Stratifier | str,
    spec: ModelSpec = ModelSpec(),
    sexes=("F", "M"),
    min_size: int = MIN_STRATUM,
) -> SubgroupResult:
    """Re-run the whole temporal protocol inside every stratum and sex."""
    if isinstance(stratifier, str):
        stratifier = STRATIFIERS[stratifier]
    test = check_schema(train, test)
    code = stratifier.assign(train)
    reports, sizes, skipped = [], {}, []
    reads = 0
    for k, label in enumerate(stratifier.labels):
        for sex in sexes:
            rows = np.flatnonzero((code == k) & (train.sex == sex))
            sizes[(label, sex)] = len(rows)
            if len(rows) < min_size:
                warnings.warn(f"stratum {label}/{sex} has n={len(rows)} < {min_size}; skipped", RuntimeWarning)
                skipped.append((label, sex))
                continue
            res = temporal_evaluate(train.take(rows), test.take(rows), spec, per_sex=True, sexes=(sex,), stratum=label)
            reads += res.audit["wave2_target_reads_during_fit"]
            reports.extend(res.reports)
    return SubgroupResult(reports, sizes, skipped, {"wave2_target_reads_during_fit": reads})
