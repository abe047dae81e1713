"""Biological-age deltas, extreme agers and system-level analyses."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..errors import InsufficientGroupError
from ..features import SYSTEM_TAGS, FeatureMatrix
from ..models import ModelSpec
from .metrics import correlation_matrix, permutation_test
from .protocol import TEST_WAVE, TRAIN_WAVE, temporal_evaluate


@dataclass(frozen=True)
class BaDeltaRecord:
    id: str
    wave: str
    predicted_ba: float
    ca: float
    delta: float


def ba_delta(ids, predictions, ages, wave: str) -> pd.DataFrame:
    """Predicted biological age minus chronological age, one row per id."""
    pred = np.asarray(predictions, dtype=float)
    ca = np.asarray(ages, dtype=float)
    if pred.shape != ca.shape:
        raise ValueError("predictions and ages differ in length")
    return pd.DataFrame(
        {"id": np.asarray(ids, dtype=object), "wave": wave, "predicted_ba": pred, "ca": ca, "delta": pred - ca}
    )


@dataclass
class ExtremeAgers:
    change: pd.Series  # delta(wave 2) - delta(wave 1), indexed by id
    fastest: list
    slowest: list
    comparison: pd.DataFrame  # biomarker, fastest_mean, slowest_mean, difference, p_value


def extreme_agers(
    deltas_w1: pd.DataFrame,
    deltas_w2: pd.DataFrame,
    baseline: pd.DataFrame,
    decile: float = 0.1,
    n_permutations: int = 10_000,
    seed: int = 0,
) -> ExtremeAgers:
    """Top and bottom ``decile`` of the change in BA delta across waves.

    ``baseline`` is indexed by id with one column per wave-1 biomarker; each
    column is compared between the two groups with a seeded permutation test.
    Ties in the ranking are broken by id.
    """
    d1 = deltas_w1.set_index("id")["delta"]
    d2 = deltas_w2.set_index("id")["delta"]
    change = (d2 - d1.reindex(d2.index)).dropna()
    k = int(math.floor(len(change) * decile))
    if k < 5:
        raise InsufficientGroupError(f"decile {decile} of n={len(change)} gives groups of {k} < 5")
    order = sorted(change.index, key=lambda i: (change[i], str(i)))
    slowest, fastest = order[:k], order[-k:][::-1]
    cols = list(baseline.columns)
    a = baseline.loc[fastest, cols].to_numpy(dtype=float)
    b = baseline.loc[slowest, cols].to_numpy(dtype=float)
    diff, p = permutation_test(a, b, n_permutations, seed)
    comparison = pd.DataFrame(
        {
            "biomarker": cols,
            "fastest_mean": a.mean(axis=0),
            "slowest_mean": b.mean(axis=0),
            "difference": diff,
            "p_value": p,
        }
    )
    return ExtremeAgers(change.rename("delta_change"), fastest, slowest, comparison)


@dataclass
class SystemAnalysis:
    r2: pd.DataFrame  # system, sex, r2_train, r2_test, n, n_features
    scores: dict  # sex -> DataFrame (id x system) of wave-2 predicted age
    corr: dict  # sex -> DataFrame (system x system)
    diff: pd.DataFrame  # corr[F] - corr[M]
    skipped: list
    audit: dict


def system_analysis(
    train: FeatureMatrix,
    test: FeatureMatrix,
    spec: ModelSpec = ModelSpec(),
    systems=None,
    sexes=("F", "M"),
) -> SystemAnalysis:
    """Per-system temporal R^2 and correlations between per-system age scores.

    A participant's score for a system is the wave-2 age predicted by the
    model fitted on that system's features alone.
    """
    tags = [m.system_tag for m in train.columns]
    if systems is None:
        systems = list(SYSTEM_TAGS) + sorted(set(tags) - set(SYSTEM_TAGS))
    rows, skipped, used = [], [], []
    preds = {}
    reads = 0
    for system in systems:
        if system not in tags:
            warnings.warn(f"system {system!r} has no features; skipped", RuntimeWarning)
            skipped.append(system)
            continue
        res = temporal_evaluate(train.select_system(system), test.select_system(system), spec, sexes=sexes, label=system)
        reads += res.audit["wave2_target_reads_during_fit"]
        n_feat = sum(t == system for t in tags)
        for sex in sexes:
            tr, te = res.report(sex, TRAIN_WAVE), res.report(sex, TEST_WAVE)
            rows.append({"system": system, "sex": sex, "r2_train": tr.r2, "r2_test": te.r2, "n": te.n, "n_features": n_feat})
        preds[system] = res.predictions[TEST_WAVE]
        used.append(system)
    scores, corr = {}, {}
    for sex in sexes:
        mask = train.sex == sex
        block = pd.DataFrame({s: preds[s][mask] for s in used}, index=pd.Index(train.ids[mask], name="id"))
        scores[sex] = block
        corr[sex] = pd.DataFrame(correlation_matrix(block.to_numpy(), "pearson"), index=used, columns=used)
    if len(sexes) == 2:
        diff = corr[sexes[0]] - corr[sexes[1]]
    else:
        diff = pd.DataFrame(np.nan, index=used, columns=used)
    return SystemAnalysis(pd.DataFrame(rows), scores, corr, diff, skipped, {"wave2_target_reads_during_fit": reads})


def feature_correlation(matrix: FeatureMatrix, method: str = "spearman", kinds=("baseline",)) -> pd.DataFrame:
    """Correlation matrix over the selected feature kinds (wave-1 EDA)."""
    sub = matrix.select_kinds(kinds)
    return pd.DataFrame(correlation_matrix(sub.values, method), index=sub.names, columns=sub.names)
