"""Imputation, slope and interaction engineering, design-matrix assembly."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .cohort import CohortTable, LongitudinalCohort, SEXES
from .errors import (
    AlignmentError,
    ChronologyError,
    ConfigError,
    InputValidationError,
    SchemaError,
    UnimputableColumnError,
)

FEATURE_KINDS = ("baseline", "interaction", "slope")
SYSTEM_TAGS = (
    "Cardiovascular",
    "BloodLipids",
    "Sleep",
    "BodyComposition",
    "Lifestyle",
    "Diet",
    "Renal",
    "Other",
)
SLOPE_SUFFIX = "_slope"
SLOPE_POLICIES = ("median", "drop")

BMI, SBP, WHR = "bmi", "sitting_blood_pressure_systolic", "waist_to_hip_ratio"
INTERACTIONS = ("bmi_bp_interaction", "whr_squared")


def load_system_map(path=None) -> dict:
    """Column -> {"system", "unit"} map; the packaged default unless ``path`` is given."""
    if path is None:
        text = resources.files("agevelocity.data").joinpath("system_map.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    columns = doc.get("columns", doc)
    for name, meta in columns.items():
        if meta.get("system", "Other") not in SYSTEM_TAGS:
            raise ConfigError(f"column {name!r}: unknown system tag {meta.get('system')!r}")
    return columns


@dataclass(frozen=True)
class FeatureMeta:
    name: str
    kind: str
    system_tag: str = "Other"
    unit: str = ""


@dataclass(frozen=True)
class ImputationEntry:
    column: str
    sex: str
    median: float
    count: int


# --------------------------------------------------------------------------
# imputation
# --------------------------------------------------------------------------


def sex_medians(t: CohortTable, columns=None) -> dict[tuple[str, str], float]:
    """Median of observed values for every (sex, column); NaN if none observed."""
    columns = t.biomarker_names if columns is None else list(columns)
    out = {}
    for sex in SEXES:
        block = t.frame.loc[t.frame["sex"] == sex, columns]
        for c in columns:
            vals = block[c].to_numpy(dtype=float)
            vals = vals[~np.isnan(vals)]
            out[(sex, c)] = float(np.median(vals)) if len(vals) else math.nan
    return out


def impute_sex_median(t: CohortTable, medians=None) -> tuple[CohortTable, list[ImputationEntry]]:
    """Fill missing biomarker cells with the median of the same sex and column.

    Medians are computed from ``t`` before any cell is written, unless
    ``medians`` (as returned by :func:`sex_medians`) is supplied, which lets a
    later wave be filled with statistics from an earlier one. Observed cells
    are never touched.
    """
    if medians is None:
        medians = sex_medians(t)
    frame = t.frame.copy()
    log = []
    for c in t.biomarker_names:
        col = frame[c].to_numpy(dtype=float, copy=True)
        for sex in SEXES:
            gap = np.isnan(col) & (frame["sex"].to_numpy() == sex)
            n = int(gap.sum())
            if not n:
                continue
            m = medians.get((sex, c), math.nan)
            if math.isnan(m):
                raise UnimputableColumnError(f"column {c!r} has no observed value for sex {sex}")
            col[gap] = m
            log.append(ImputationEntry(c, sex, m, n))
        frame[c] = col
    return t.replace_frame(frame), log


# --------------------------------------------------------------------------
# slopes and interactions
# --------------------------------------------------------------------------


def _is_missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def compute_slope(y1, y2, t1, t2):
    """Annualised change ``(y2 - y1) / (t2 - t1)``; ``None`` if either value is missing."""
    if not t2 > t1:
        raise ChronologyError(f"second time point ({t2}) must be after the first ({t1})")
    if _is_missing(y1) or _is_missing(y2):
        return None
    return (y2 - y1) / (t2 - t1)


def compute_slopes(c: LongitudinalCohort, columns: Iterable[str]) -> pd.DataFrame:
    """One ``<name>_slope`` column per biomarker; NaN where either wave is missing."""
    columns = list(columns)
    unknown = [n for n in columns if n not in c.wave1.biomarker_names or n not in c.wave2.biomarker_names]
    if unknown:
        raise ConfigError(f"slope columns not present in both waves: {unknown}")
    dt = c.elapsed_years.to_numpy(dtype=float)
    out = pd.DataFrame(index=pd.Index(c.ids, name="id"))
    for name in columns:
        y1 = c.wave1.frame[name].to_numpy(dtype=float)
        y2 = c.wave2.frame[name].to_numpy(dtype=float)
        out[name + SLOPE_SUFFIX] = (y2 - y1) / dt
    return out


def interaction_features(bmi, sbp, whr):
    """(BMI x systolic BP, WHR squared); works on scalars and arrays alike."""
    return bmi * sbp, whr * whr


# --------------------------------------------------------------------------
# design matrix
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureMatrix:
    ids: np.ndarray
    sex: np.ndarray
    values: np.ndarray
    columns: tuple[FeatureMeta, ...]
    target: np.ndarray
    log: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n, p = self.values.shape
        if len(self.ids) != n or len(self.sex) != n or len(self.target) != n:
            raise AlignmentError("ids, sex, target and values disagree on row count")
        if p != len(self.columns):
            raise AlignmentError("column metadata does not match value width")

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.columns]

    @property
    def shape(self):
        return self.values.shape

    def __len__(self):
        return len(self.ids)

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return replace(
            self,
            ids=self.ids[rows],
            sex=self.sex[rows],
            values=self.values[rows],
            target=self.target[rows],
        )

    def for_sex(self, sex: str) -> "FeatureMatrix":
        return self.take(np.flatnonzero(self.sex == sex))

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        index = {n: i for i, n in enumerate(self.names)}
        missing = [n for n in names if n not in index]
        if missing:
            raise SchemaError(f"unknown feature columns: {missing}")
        cols = [index[n] for n in names]
        return replace(self, values=self.values[:, cols], columns=tuple(self.columns[i] for i in cols))

    def select_kinds(self, kinds: Iterable[str]) -> "FeatureMatrix":
        kinds = set(kinds)
        return self.select([m.name for m in self.columns if m.kind in kinds])

    def select_system(self, system: str) -> "FeatureMatrix":
        return self.select([m.name for m in self.columns if m.system_tag == system])

    def align_to(self, other: "FeatureMatrix") -> "FeatureMatrix":
        """Reorder rows to follow ``other.ids``; both must hold the same ids."""
        if set(self.ids) != set(other.ids) or len(self.ids) != len(other.ids):
            raise AlignmentError("matrices hold different participant ids")
        pos = {pid: i for i, pid in enumerate(self.ids)}
        return self.take(np.array([pos[pid] for pid in other.ids], dtype=int))

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=self.names)
        df.insert(0, "sex", self.sex)
        df.insert(0, "target", self.target)
        df.insert(0, "id", self.ids)
        return df

    def to_csv(self, path) -> None:
        """CSV with ``id,target,sex`` then one column per feature, plus a JSON sidecar."""
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        sidecar = {"columns": [m.__dict__ for m in self.columns]}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        path = Path(path)
        df = pd.read_csv(path, dtype={"id": str, "sex": str}, float_precision="round_trip")
        meta = json.loads(path.with_suffix(".json").read_text())["columns"]
        columns = tuple(FeatureMeta(**m) for m in meta)
        names = [m.name for m in columns]
        if list(df.columns[3:]) != names:
            raise SchemaError(f"{path.name}: header does not match sidecar metadata")
        return cls(
            ids=df["id"].to_numpy(dtype=object),
            sex=df["sex"].to_numpy(dtype=object),
            values=df[names].to_numpy(dtype=float),
            columns=columns,
            target=df["target"].to_numpy(dtype=float),
        )


def _meta(name, kind, system_map):
    base = name[: -len(SLOPE_SUFFIX)] if kind == "slope" else name
    m = system_map.get(base, {})
    unit = m.get("unit", "")
    if kind == "slope" and unit:
        unit += "/year"
    return FeatureMeta(name, kind, m.get("system", "Other"), unit)


def slope_medians(slopes: pd.DataFrame, sex: pd.Series) -> dict[tuple[str, str], float]:
    out = {}
    for s in SEXES:
        block = slopes.loc[(sex == s).to_numpy()]
        for c in slopes.columns:
            v = block[c].to_numpy(dtype=float)
            v = v[~np.isnan(v)]
            out[(s, c)] = float(np.median(v)) if len(v) else math.nan
    return out


def assemble_matrix(
    baseline: CohortTable,
    slopes: pd.DataFrame,
    policy: str = "median",
    system_map=None,
    fill_values=None,
) -> FeatureMatrix:
    """Columns ordered baselines, interactions, slopes; target is the wave's age.

    ``baseline`` must already be imputed. Missing slopes are filled with the
    sex-specific median of that slope column (``policy="median"``, or the
    supplied ``fill_values``) or the row is dropped (``policy="drop"``).
    """
    if policy not in SLOPE_POLICIES:
        raise ConfigError(f"slope policy must be one of {SLOPE_POLICIES}, got {policy!r}")
    system_map = load_system_map() if system_map is None else system_map
    frame = baseline.frame
    if list(slopes.index) != list(frame.index):
        if set(slopes.index) != set(frame.index):
            raise AlignmentError("slope table ids do not match the baseline wave")
        slopes = slopes.loc[frame.index]
    names = baseline.biomarker_names
    base = frame[names].to_numpy(dtype=float)
    if np.isnan(base).any():
        r, c = np.argwhere(np.isnan(base))[0]
        raise InputValidationError(f"baseline cell {frame.index[r]!r}/{names[c]} is missing; impute first")

    blocks = [base]
    columns = [_meta(n, "baseline", system_map) for n in names]
    if all(n in names for n in (BMI, SBP, WHR)):
        inter = interaction_features(frame[BMI].to_numpy(float), frame[SBP].to_numpy(float), frame[WHR].to_numpy(float))
        blocks.append(np.column_stack(inter))
        columns += [_meta(n, "interaction", system_map) for n in INTERACTIONS]

    slope_vals = slopes.to_numpy(dtype=float, copy=True)
    sex = frame["sex"]
    keep = np.ones(len(frame), dtype=bool)
    log = {"slope_policy": policy, "slope_filled": {}}
    if policy == "median":
        fills = slope_medians(slopes, sex) if fill_values is None else fill_values
        for j, c in enumerate(slopes.columns):
            for s in SEXES:
                gap = np.isnan(slope_vals[:, j]) & (sex.to_numpy() == s)
                if gap.any():
                    m = fills.get((s, c), math.nan)
                    if math.isnan(m):
                        raise UnimputableColumnError(f"slope {c!r} has no observed value for sex {s}")
                    slope_vals[gap, j] = m
                    log["slope_filled"][f"{c}:{s}"] = int(gap.sum())
    else:
        keep = ~np.isnan(slope_vals).any(axis=1)
        log["dropped_ids"] = list(frame.index[~keep])
    blocks.append(slope_vals)
    columns += [_meta(c, "slope", system_map) for c in slopes.columns]

    values = np.column_stack(blocks)[keep]
    return FeatureMatrix(
        ids=frame.index.to_numpy(dtype=object)[keep],
        sex=sex.to_numpy(dtype=object)[keep],
        values=values,
        columns=tuple(columns),
        target=frame["age_years"].to_numpy(dtype=float)[keep],
        log=log,
    )


@dataclass(frozen=True)
class TemporalDesign:
    """Wave-1 and wave-2 matrices sharing ids, columns and slope values."""

    train: FeatureMatrix
    test: FeatureMatrix
    imputation_log: list
    slopes: pd.DataFrame


def build_temporal_design(
    cohort: LongitudinalCohort,
    slope_columns=None,
    policy: str = "median",
    system_map=None,
) -> TemporalDesign:
    """Full feature pipeline for the train-on-wave-1 / test-on-wave-2 protocol.

    Wave-1 gaps are filled with wave-1 sex medians; wave-2 gaps reuse those
    same medians so no wave-2 statistic shapes the features.
    """
    if slope_columns is None:
        slope_columns = [n for n in cohort.wave1.biomarker_names if n in cohort.wave2.biomarker_names]
    if cohort.wave1.biomarker_names != cohort.wave2.biomarker_names:
        raise AlignmentError("wave files carry different biomarker columns")
    medians = sex_medians(cohort.wave1)
    w1, log1 = impute_sex_median(cohort.wave1, medians)
    w2, log2 = impute_sex_median(cohort.wave2, medians)
    slopes = compute_slopes(cohort, slope_columns)
    fills = slope_medians(slopes, cohort.sex)
    train = assemble_matrix(w1, slopes, policy, system_map, fills)
    test = assemble_matrix(w2, slopes, policy, system_map, fills)
    log = [dict(e.__dict__, wave="Wave1") for e in log1] + [dict(e.__dict__, wave="Wave2") for e in log2]
    return TemporalDesign(train, test, log, slopes)
