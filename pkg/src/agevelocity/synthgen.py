"""Seeded synthetic two-wave cohorts with known latent aging dynamics.

Each participant ``i`` gets a wave-1 age ``a_i ~ U(age_range)``, a latent
aging rate ``r_i ~ N(0, latent_rate_sd)`` and an elapsed time between visits
``dt_i ~ U(elapsed_range)``. Biomarker ``k`` follows a population velocity
profile ``v_k(a)`` (piecewise linear in age; constant ``age_trend`` when no
knots are given) whose integral from ``reference_age`` sets the
cross-sectional level::

    wave1 = mean_sex + V_k(a_i) + baseline_sd * z + noise_sd * e1
    true_slope = v_k(a_i) * (1 + r_i) + slope_sd * eta
    wave2 = wave1 + dt_i * true_slope + noise_sd * e2

Every random number comes from a Philox stream keyed by a BLAKE2b digest of
``(seed, participant id, column)``, so output does not depend on row order or
on how generation is scheduled.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import date
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from .cohort import DAYS_PER_YEAR, CohortTable, Wave, write_wave
from .errors import ConfigError

# wave-1 visits fall in this window so wave 2 lands inside 2021-2022 for any
# elapsed time in [1.8, 2.2] years
WAVE1_VISIT_WINDOW = (date(2019, 3, 15), date(2020, 10, 15))


@dataclass(frozen=True)
class BiomarkerSpec:
    baseline_mean_by_sex: dict
    baseline_sd: float
    age_trend: float
    slope_sd: float
    noise_sd: float
    velocity_knots: tuple = ()

    def velocity(self, age):
        """Population rate of change per year at ``age``."""
        age = np.asarray(age, dtype=float)
        if not self.velocity_knots:
            return np.full_like(age, self.age_trend)
        ka, kv = np.array(self.velocity_knots, dtype=float).T
        return np.interp(age, ka, kv)

    def level(self, age, reference_age):
        """Integral of the velocity profile from ``reference_age`` to ``age``."""
        age = np.asarray(age, dtype=float)
        if not self.velocity_knots:
            return self.age_trend * (age - reference_age)
        ka, kv = np.array(self.velocity_knots, dtype=float).T
        grid = np.union1d(ka, [reference_age])
        lo, hi = min(grid.min(), age.min()), max(grid.max(), age.max())
        grid = np.union1d(grid, [lo, hi])
        vel = np.interp(grid, ka, kv)
        cum = np.concatenate([[0.0], np.cumsum(np.diff(grid) * (vel[1:] + vel[:-1]) / 2)])
        # velocity is linear between grid points, so integrate exactly inside the segment
        j = np.clip(np.searchsorted(grid, age, side="right") - 1, 0, len(grid) - 2)
        x0, v0 = grid[j], vel[j]
        v_age = np.interp(age, ka, kv)
        at_age = cum[j] + (age - x0) * (v0 + v_age) / 2
        ref = np.interp(reference_age, grid, cum)
        return at_age - ref


@dataclass(frozen=True)
class SynthConfig:
    n_female: int
    n_male: int
    age_range: tuple
    biomarker_specs: dict
    latent_rate_sd: float
    missing_rate: float
    seed: int
    reference_age: float = 50.0
    elapsed_range: tuple = (1.8, 2.2)
    exclusion_rates: dict = field(default_factory=dict)
    version: int = 1

    def __post_init__(self):
        validate_config(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        doc = dict(doc)
        try:
            specs = {
                name: BiomarkerSpec(
                    baseline_mean_by_sex=dict(s["baseline_mean_by_sex"]),
                    baseline_sd=float(s["baseline_sd"]),
                    age_trend=float(s["age_trend"]),
                    slope_sd=float(s["slope_sd"]),
                    noise_sd=float(s["noise_sd"]),
                    velocity_knots=tuple(tuple(map(float, k)) for k in s.get("velocity_knots", ())),
                )
                for name, s in doc.pop("biomarker_specs").items()
            }
            return cls(
                n_female=int(doc["n_female"]),
                n_male=int(doc["n_male"]),
                age_range=tuple(doc["age_range"]),
                biomarker_specs=specs,
                latent_rate_sd=float(doc["latent_rate_sd"]),
                missing_rate=float(doc["missing_rate"]),
                seed=int(doc["seed"]),
                reference_age=float(doc.get("reference_age", 50.0)),
                elapsed_range=tuple(doc.get("elapsed_range", (1.8, 2.2))),
                exclusion_rates=dict(doc.get("exclusion_rates", {})),
                version=int(doc.get("version", 1)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid synthetic cohort config: {exc!r}") from exc

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["age_range"] = list(self.age_range)
        doc["elapsed_range"] = list(self.elapsed_range)
        for s in doc["biomarker_specs"].values():
            s["velocity_knots"] = [list(k) for k in s["velocity_knots"]]
            if not s["velocity_knots"]:
                del s["velocity_knots"]
        return doc

    def replace(self, **changes) -> "SynthConfig":
        doc = self.to_dict()
        doc.update(changes)
        return SynthConfig.from_dict(doc)


def validate_config(cfg: SynthConfig) -> None:
    if cfg.n_female < 0 or cfg.n_male < 0 or cfg.n_female + cfg.n_male == 0:
        raise ConfigError("participant counts must be non-negative and not both zero")
    lo, hi = cfg.age_range
    if not 18 < lo < hi < 120:
        raise ConfigError(f"age_range must be ordered inside (18, 120), got {cfg.age_range}")
    e_lo, e_hi = cfg.elapsed_range
    if not 1.8 <= e_lo <= e_hi <= 2.2:
        raise ConfigError("elapsed_range must lie within [1.8, 2.2] years to keep visits inside the wave windows")
    if cfg.latent_rate_sd < 0:
        raise ConfigError("latent_rate_sd must be >= 0")
    if not 0 <= cfg.missing_rate < 1:
        raise ConfigError("missing_rate must be in [0, 1)")
    if not cfg.biomarker_specs:
        raise ConfigError("at least one biomarker is required")
    for name, s in cfg.biomarker_specs.items():
        if min(s.baseline_sd, s.slope_sd, s.noise_sd) < 0:
            raise ConfigError(f"{name}: standard deviations must be >= 0")
        if set(s.baseline_mean_by_sex) != {"F", "M"}:
            raise ConfigError(f"{name}: baseline_mean_by_sex needs exactly F and M")
        ages = [k[0] for k in s.velocity_knots]
        if ages != sorted(ages) or len(set(ages)) != len(ages):
            raise ConfigError(f"{name}: velocity_knots ages must be strictly increasing")
    for crit, rate in cfg.exclusion_rates.items():
        if not 0 <= rate < 1:
            raise ConfigError(f"exclusion rate for {crit!r} must be in [0, 1)")


def default_config_dict() -> dict:
    text = resources.files("agevelocity.data").joinpath("synth_default.json").read_text()
    return json.loads(text)


def default_config(**overrides) -> SynthConfig:
    doc = default_config_dict()
    doc.update(overrides)
    return SynthConfig.from_dict(doc)


def load_config(path) -> SynthConfig:
    return SynthConfig.from_dict(json.loads(Path(path).read_text()))


def stream(seed: int, pid: str, column: str) -> np.random.Generator:
    """Independent Philox generator for one (seed, participant, column) cell."""
    digest = hashlib.blake2b(f"{seed}\x1f{pid}\x1f{column}".encode(), digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


@dataclass(frozen=True)
class GroundTruth:
    latent_rate: pd.Series
    true_slopes: pd.DataFrame

    def to_frame(self) -> pd.DataFrame:
        df = self.true_slopes.add_suffix("_true_slope")
        df.insert(0, "latent_rate", self.latent_rate)
        return df


PERSON_COLUMN = "__person__"


def generate_cohort(cfg: SynthConfig) -> tuple[CohortTable, CohortTable, GroundTruth]:
    n = cfg.n_female + cfg.n_male
    width = len(str(n))
    ids = [f"P{i + 1:0{width}d}" for i in range(n)]
    sex = np.array(["F"] * cfg.n_female + ["M"] * cfg.n_male, dtype=object)
    criteria = sorted(cfg.exclusion_rates)

    # person-level draws: age, latent rate, elapsed time, visit date, exclusion flags
    person = np.empty((n, 4 + len(criteria)))
    for i, pid in enumerate(ids):
        g = stream(cfg.seed, pid, PERSON_COLUMN)
        person[i, :3] = g.random(3)
        person[i, 3] = g.standard_normal()
        if criteria:
            person[i, 4:] = g.random(len(criteria))
    lo, hi = cfg.age_range
    age1 = lo + (hi - lo) * person[:, 0]
    rate = cfg.latent_rate_sd * person[:, 3]
    window = (WAVE1_VISIT_WINDOW[1] - WAVE1_VISIT_WINDOW[0]).days
    offset = np.floor(person[:, 1] * (window + 1)).astype(int)
    e_lo, e_hi = cfg.elapsed_range
    gap_days = np.rint((e_lo + (e_hi - e_lo) * person[:, 2]) * DAYS_PER_YEAR).astype(int)
    date1 = pd.to_datetime(WAVE1_VISIT_WINDOW[0]) + pd.to_timedelta(offset, unit="D")
    date2 = date1 + pd.to_timedelta(gap_days, unit="D")
    dt = gap_days / DAYS_PER_YEAR
    age2 = age1 + dt

    index = pd.Index(ids, name="id")
    f1 = pd.DataFrame({"sex": sex, "age_years": age1, "collection_date": date1}, index=index)
    f2 = pd.DataFrame({"sex": sex, "age_years": age2, "collection_date": date2}, index=index)
    for j, crit in enumerate(criteria):
        flag = person[:, 4 + j] < cfg.exclusion_rates[crit]
        f1["excl_" + crit] = flag
        f2["excl_" + crit] = flag

    true_slopes = pd.DataFrame(index=index)
    is_f = sex == "F"
    for name, spec in cfg.biomarker_specs.items():
        draws = np.empty((n, 6))
        for i, pid in enumerate(ids):
            g = stream(cfg.seed, pid, name)
            draws[i, :4] = g.standard_normal(4)
            draws[i, 4:] = g.random(2)
        z, e1, eta, e2, m1, m2 = draws.T
        mean = np.where(is_f, spec.baseline_mean_by_sex["F"], spec.baseline_mean_by_sex["M"])
        y1 = mean + spec.level(age1, cfg.reference_age) + spec.baseline_sd * z + spec.noise_sd * e1
        slope = spec.velocity(age1) * (1 + rate) + spec.slope_sd * eta
        y2 = y1 + dt * slope + spec.noise_sd * e2
        f1[name] = np.where(m1 < cfg.missing_rate, np.nan, y1)
        f2[name] = np.where(m2 < cfg.missing_rate, np.nan, y2)
        true_slopes[name] = slope

    from .features import load_system_map

    meta = load_system_map()
    w1 = CohortTable.from_frame(Wave.WAVE1, f1, meta)
    w2 = CohortTable.from_frame(Wave.WAVE2, f2, meta)
    return w1, w2, GroundTruth(pd.Series(rate, index=index, name="latent_rate"), true_slopes)


def write_cohort(out_dir, cfg: SynthConfig, w1=None, w2=None, truth=None) -> dict:
    """Write wave1.csv, wave2.csv, ground_truth.csv and synth_config.json."""
    if w1 is None:
        w1, w2, truth = generate_cohort(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "wave1": out / "wave1.csv",
        "wave2": out / "wave2.csv",
        "ground_truth": out / "ground_truth.csv",
        "synth_config": out / "synth_config.json",
    }
    write_wave(w1, paths["wave1"])
    write_wave(w2, paths["wave2"])
    truth.to_frame().to_csv(paths["ground_truth"], float_format="%.17g", lineterminator="\n")
    paths["synth_config"].write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return paths


def load_ground_truth(path) -> pd.DataFrame:
    return pd.read_csv(path, index_col="id", dtype={"id": str}, float_precision="round_trip")
