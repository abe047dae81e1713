"""Second-order boosting objective for squared-error loss.

With ``L(y, f) = (f - y)^2 / 2`` the per-sample gradient is ``f - y`` and the
hessian is 1, so the quadratic expansion the split search relies on is exact.
"""
from __future__ import annotations

import numpy as np

from ..errors import DegenerateError


def split_gain(G_L, H_L, G_R, H_R, lam, gamma):
    """Objective reduction from splitting a leaf, net of the per-leaf penalty."""
    return 0.5 * (G_L**2 / (H_L + lam) + G_R**2 / (H_R + lam) - (G_L + G_R) ** 2 / (H_L + H_R + lam)) - gamma


def leaf_weight(G, H, lam):
    if H + lam == 0:
        raise DegenerateError("leaf has zero hessian and zero L2 penalty")
    return -G / (H + lam)


def squared_loss(y, pred) -> float:
    r = np.asarray(pred) - np.asarray(y)
    return 0.5 * float(r @ r)


def regularization(leaf_weights, lam, gamma) -> float:
    w = np.asarray(leaf_weights, dtype=float)
    return gamma * len(w) + 0.5 * lam * float(w @ w)
