"""Metrics, the temporal validation protocol and downstream analyses."""
from .analysis import BaDeltaRecord, ExtremeAgers, SystemAnalysis, ba_delta, extreme_agers, feature_correlation, system_analysis
from .metrics import correlation_matrix, pearson, permutation_test, r2, rmse, spearman
from .protocol import (
    STRATIFIERS,
    TEST_WAVE,
    TRAIN_WAVE,
    EvaluationReport,
    Stratifier,
    SubgroupResult,
    TargetVault,
    TemporalResult,
    format_reports,
    reports_to_nested,
    subgroup_eval,
    temporal_evaluate,
)
