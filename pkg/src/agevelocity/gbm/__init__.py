"""Gradient-boosted regression trees."""
from .binning import apply_bins, bin_features
from .booster import BoostedEnsemble, GbmParams, fit, predict
from .goss import goss_sample
from .objective import leaf_weight, split_gain
from .tree import Tree

__all__ = [
    "BoostedEnsemble",
    "GbmParams",
    "Tree",
    "apply_bins",
    "bin_features",
    "fit",
    "goss_sample",
    "leaf_weight",
    "predict",
    "split_gain",
]
