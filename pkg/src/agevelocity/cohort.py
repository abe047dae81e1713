"""Wave tables: loading, validation, pairing across waves and exclusions.

A wave lives in a :class:`CohortTable`, a thin immutable wrapper around a
``pandas.DataFrame`` indexed by participant id. Missing biomarker cells are
``NaN`` in the frame and ``None`` in :class:`ParticipantRecord`; no other
sentinel is accepted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np
import pandas as pd

from .errors import (
    AlignmentError,
    ChronologyError,
    ConfigError,
    DuplicationError,
    EmptyCohortError,
    ParseError,
    SchemaError,
)

DAYS_PER_YEAR = 365.25
REQUIRED_COLUMNS = ("id", "sex", "age_years", "collection_date")
FLAG_PREFIX = "excl_"
SEXES = ("F", "M")
AGE_BOUNDS = (18.0, 120.0)


class Wave(str, Enum):
    WAVE1 = "Wave1"
    WAVE2 = "Wave2"

    @property
    def date_range(self) -> tuple[date, date]:
        return WAVE_DATE_RANGES[self]


WAVE_DATE_RANGES = {
    Wave.WAVE1: (date(2019, 1, 1), date(2020, 12, 31)),
    Wave.WAVE2: (date(2021, 1, 1), date(2022, 12, 31)),
}


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    unit: str = ""
    system_tag: str = "Other"


@dataclass(frozen=True)
class ParticipantRecord:
    id: str
    sex: str
    chronological_age: float
    collection_date: date
    biomarkers: Mapping[str, float | None]
    excluded_flag: str | None = None


@dataclass(frozen=True)
class CohortTable:
    """One wave of participants.

    ``frame`` columns: ``sex`` ('F'/'M'), ``age_years``, ``collection_date``
    (datetime64), the boolean ``excl_*`` flags, then one float column per
    biomarker. Construct through :func:`load_wave` or :meth:`from_frame`.
    """

    wave_id: Wave
    frame: pd.DataFrame
    biomarker_columns: tuple[ColumnMeta, ...]

    def __post_init__(self):
        _validate_table(self)

    @classmethod
    def from_frame(cls, wave_id, frame, column_meta=None) -> "CohortTable":
        wave_id = Wave(wave_id)
        frame = frame.copy()
        if frame.index.name != "id":
            if "id" in frame.columns:
                frame = frame.set_index("id")
            else:
                raise SchemaError("frame needs an 'id' column or index")
        frame.index = frame.index.astype(str)
        frame["collection_date"] = pd.to_datetime(frame["collection_date"]).dt.normalize()
        flags = [c for c in frame.columns if c.startswith(FLAG_PREFIX)]
        for c in flags:
            frame[c] = frame[c].astype(bool)
        names = [c for c in frame.columns if c not in REQUIRED_COLUMNS and c not in flags]
        for c in names:
            frame[c] = frame[c].astype(float)
        frame = frame[["sex", "age_years", "collection_date", *flags, *names]]
        return cls(wave_id, frame, _column_meta(names, column_meta))

    @property
    def ids(self) -> list[str]:
        return list(self.frame.index)

    @property
    def flag_columns(self) -> list[str]:
        return [c for c in self.frame.columns if c.startswith(FLAG_PREFIX)]

    @property
    def biomarker_names(self) -> list[str]:
        return [m.name for m in self.biomarker_columns]

    def __len__(self):
        return len(self.frame)

    def record(self, pid: str) -> ParticipantRecord:
        row = self.frame.loc[pid]
        flags = [c[len(FLAG_PREFIX):] for c in self.flag_columns if row[c]]
        biomarkers = {
            name: (None if math.isnan(row[name]) else float(row[name]))
            for name in self.biomarker_names
        }
        return ParticipantRecord(
            id=pid,
            sex=row["sex"],
            chronological_age=float(row["age_years"]),
            collection_date=row["collection_date"].date(),
            biomarkers=biomarkers,
            excluded_flag=",".join(flags) or None,
        )

    def records(self) -> Iterator[ParticipantRecord]:
        for pid in self.frame.index:
            yield self.record(pid)

    def replace_frame(self, frame: pd.DataFrame) -> "CohortTable":
        return CohortTable(self.wave_id, frame, self.biomarker_columns)

    def subset(self, ids) -> "CohortTable":
        return self.replace_frame(self.frame.loc[list(ids)].copy())


def _column_meta(names, column_meta) -> tuple[ColumnMeta, ...]:
    if column_meta is None:
        from .features import load_system_map

        column_meta = load_system_map()
    out = []
    for name in names:
        meta = column_meta.get(name)
        if isinstance(meta, ColumnMeta):
            out.append(meta)
        elif meta is None:
            out.append(ColumnMeta(name))
        else:
            out.append(ColumnMeta(name, meta.get("unit", ""), meta.get("system", "Other")))
    return tuple(out)


def _validate_table(t: CohortTable) -> None:
    f = t.frame
    if not f.index.is_unique:
        dup = f.index[f.index.duplicated()][0]
        raise DuplicationError(f"duplicate participant id {dup!r} in {t.wave_id.value}")
    missing = [c for c in REQUIRED_COLUMNS[1:] if c not in f.columns]
    if missing:
        raise SchemaError(f"missing required columns: {missing}")
    bad_sex = ~f["sex"].isin(SEXES)
    if bad_sex.any():
        pid = f.index[bad_sex.to_numpy()][0]
        raise SchemaError(f"participant {pid!r}: sex must be one of {SEXES}")
    age = f["age_years"].to_numpy(dtype=float)
    bad_age = ~((age > AGE_BOUNDS[0]) & (age < AGE_BOUNDS[1]))
    if bad_age.any():
        pid = f.index[bad_age][0]
        raise SchemaError(f"participant {pid!r}: age_years outside {AGE_BOUNDS}")
    dates = f["collection_date"]
    if dates.isna().any():
        pid = f.index[dates.isna().to_numpy()][0]
        raise SchemaError(f"participant {pid!r}: collection_date missing")
    lo, hi = t.wave_id.date_range
    out = (dates < pd.Timestamp(lo)) | (dates > pd.Timestamp(hi))
    if out.any():
        pid = f.index[out.to_numpy()][0]
        raise ChronologyError(
            f"participant {pid!r}: collection_date outside {t.wave_id.value} range {lo}..{hi}"
        )
    names = [m.name for m in t.biomarker_columns]
    if names:
        vals = f[names].to_numpy(dtype=float)
        if np.isinf(vals).any():
            r, c = np.argwhere(np.isinf(vals))[0]
            raise ParseError(f"non-finite value at {f.index[r]!r}/{names[c]}", f.index[r], names[c])


def load_wave(path, wave_id, column_meta=None) -> CohortTable:
    """Parse one wave CSV into a validated :class:`CohortTable`."""
    wave_id = Wave(wave_id)
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"wave file not found: {path}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    header = list(raw.columns)
    if tuple(header[:4]) != REQUIRED_COLUMNS:
        raise SchemaError(f"{path.name}: header must start with {','.join(REQUIRED_COLUMNS)}, got {header[:4]}")
    if len(set(header)) != len(header) or any(h.startswith("Unnamed:") or not h for h in header):
        raise SchemaError(f"{path.name}: duplicated or empty header names")
    rest = header[4:]
    n_flags = 0
    while n_flags < len(rest) and rest[n_flags].startswith(FLAG_PREFIX):
        n_flags += 1
    flags, names = rest[:n_flags], rest[n_flags:]
    if any(n.startswith(FLAG_PREFIX) for n in names):
        raise SchemaError(f"{path.name}: exclusion flag columns must precede biomarkers")

    ids = raw["id"].str.strip()
    dup = ids[ids.duplicated()]
    if len(dup):
        raise DuplicationError(f"duplicate participant id {dup.iloc[0]!r} in {path.name}")
    if (ids == "").any():
        raise ParseError(f"{path.name}: empty id", int(np.argmax(ids == "")) + 2, "id")

    frame = pd.DataFrame(index=pd.Index(ids, name="id"))
    frame["sex"] = raw["sex"].str.strip().to_numpy()
    frame["age_years"] = _parse_numeric(raw, "age_years", path, allow_empty=False)
    try:
        frame["collection_date"] = pd.to_datetime(raw["collection_date"].str.strip(), format="%Y-%m-%d").to_numpy()
    except ValueError as exc:
        raise ParseError(f"{path.name}: collection_date must be ISO-8601 ({exc})", column="collection_date") from exc
    for c in flags:
        frame[c] = _parse_flag(raw, c, path)
    for c in names:
        frame[c] = _parse_numeric(raw, c, path, allow_empty=True)
    return CohortTable(wave_id, frame, _column_meta(names, column_meta))


def _parse_numeric(raw, column, path, allow_empty):
    text = raw[column].str.strip()
    empty = text == ""
    # float() is correctly rounded, so written values read back bit-for-bit
    values = np.array([_to_float(s) for s in text], dtype=float)
    bad = (~empty.to_numpy() & ~np.isfinite(values)) | (empty.to_numpy() & (not allow_empty))
    if bad.any():
        i = int(np.argmax(bad))
        raise ParseError(
            f"{path.name}: row {i + 2}, column {column!r}: cannot parse {raw[column].iloc[i]!r} as a finite number",
            row=i + 2,
            column=column,
        )
    return values


def _to_float(s: str) -> float:
    if not s:
        return math.nan
    try:
        return float(s)
    except ValueError:
        return math.inf  # flagged as unparseable by the caller


_FLAG_VALUES = {"": False, "0": False, "1": True, "false": False, "true": True}


def _parse_flag(raw, column, path):
    text = raw[column].str.strip().str.lower()
    bad = ~text.isin(list(_FLAG_VALUES))
    if bad.any():
        i = int(np.argmax(bad.to_numpy()))
        raise ParseError(f"{path.name}: row {i + 2}, column {column!r}: flag must be 0/1", row=i + 2, column=column)
    return text.map(_FLAG_VALUES).to_numpy(dtype=bool)


def write_wave(table: CohortTable, path) -> None:
    f = table.frame
    out = pd.DataFrame(index=f.index)
    out["sex"] = f["sex"]
    out["age_years"] = f["age_years"].map(lambda v: repr(float(v)))
    out["collection_date"] = f["collection_date"].dt.strftime("%Y-%m-%d")
    for c in table.flag_columns:
        out[c] = f[c].astype(int)
    for c in table.biomarker_names:
        out[c] = f[c].map(lambda v: "" if math.isnan(v) else repr(float(v)))
    out.to_csv(path, index_label="id", lineterminator="\n")


@dataclass(frozen=True)
class LongitudinalCohort:
    """Participants observed in both waves, aligned row-by-row.

    ``wave1`` and ``wave2`` share the same ids in the same (sorted) order.
    ``log`` records what pairing and exclusions dropped.
    """

    wave1: CohortTable
    wave2: CohortTable
    elapsed_years: pd.Series
    log: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if list(self.wave1.frame.index) != list(self.wave2.frame.index):
            raise AlignmentError("wave tables are not aligned by id")
        s1, s2 = self.wave1.frame["sex"], self.wave2.frame["sex"]
        if (s1 != s2).any():
            pid = s1.index[(s1 != s2).to_numpy()][0]
            raise AlignmentError(f"participant {pid!r}: sex differs between waves")
        if (self.elapsed_years <= 0).any():
            pid = self.elapsed_years.index[(self.elapsed_years <= 0).to_numpy()][0]
            raise ChronologyError(f"participant {pid!r}: wave-2 date is not after wave-1 date")

    @property
    def ids(self) -> list[str]:
        return self.wave1.ids

    @property
    def sex(self) -> pd.Series:
        return self.wave1.frame["sex"]

    def __len__(self):
        return len(self.wave1)

    def pairs(self) -> Iterator[tuple[ParticipantRecord, ParticipantRecord]]:
        for pid in self.ids:
            yield self.wave1.record(pid), self.wave2.record(pid)

    def subset(self, ids) -> "LongitudinalCohort":
        ids = [i for i in self.ids if i in set(ids)]
        return LongitudinalCohort(
            self.wave1.subset(ids), self.wave2.subset(ids), self.elapsed_years.loc[ids].copy(), dict(self.log)
        )


def elapsed_years(date1, date2) -> float:
    return (pd.Timestamp(date2) - pd.Timestamp(date1)).days / DAYS_PER_YEAR


def pair_waves(w1: CohortTable, w2: CohortTable) -> LongitudinalCohort:
    """Keep participants present in both waves and compute elapsed time per pair."""
    if w1.wave_id is not Wave.WAVE1 or w2.wave_id is not Wave.WAVE2:
        raise SchemaError(f"expected (Wave1, Wave2), got ({w1.wave_id.value}, {w2.wave_id.value})")
    ids1, ids2 = set(w1.ids), set(w2.ids)
    common = sorted(ids1 & ids2)
    if not common:
        raise EmptyCohortError("no participant id appears in both waves")
    t1 = w1.subset(common)
    t2 = w2.subset(common)
    days = (t2.frame["collection_date"] - t1.frame["collection_date"]).dt.days
    bad = days <= 0
    if bad.any():
        pid = days.index[bad.to_numpy()][0]
        raise ChronologyError(f"participant {pid!r}: wave-2 collection_date is not after wave-1")
    log = {
        "n_pairs": len(common),
        "dropped_wave1_only": sorted(ids1 - ids2),
        "dropped_wave2_only": sorted(ids2 - ids1),
    }
    return LongitudinalCohort(t1, t2, (days / DAYS_PER_YEAR).rename("elapsed_years"), log)


def apply_exclusions(c: LongitudinalCohort, criteria: Iterable[str]) -> LongitudinalCohort:
    """Drop pairs whose wave-1 record carries any listed exclusion flag.

    Criteria may be given with or without the ``excl_`` prefix. Removal counts
    per criterion land in ``log['excluded']`` (a pair flagged twice counts
    under both criteria).
    """
    columns = []
    for name in criteria:
        col = name if name.startswith(FLAG_PREFIX) else FLAG_PREFIX + name
        if col not in c.wave1.flag_columns:
            raise ConfigError(f"unknown exclusion criterion {name!r}; available: {c.wave1.flag_columns}")
        columns.append(col)
    if not columns:
        return c
    flags = c.wave1.frame[columns]
    drop = flags.any(axis=1)
    keep = [pid for pid, d in zip(c.ids, drop) if not d]
    if not keep:
        raise EmptyCohortError("every pair is excluded by the given criteria")
    out = c.subset(keep)
    log = dict(c.log)
    log["excluded"] = {col[len(FLAG_PREFIX):]: int(flags[col].sum()) for col in columns}
    log["n_pairs"] = len(keep)
    return LongitudinalCohort(out.wave1, out.wave2, out.elapsed_years, log)
