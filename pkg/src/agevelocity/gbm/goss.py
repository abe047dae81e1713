"""Gradient-based one-side sampling."""
from __future__ import annotations

import logging
import math

import numpy as np

log = logging.getLogger(__name__)

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def mix64(x) -> np.ndarray:
    """SplitMix64 finalizer, applied elementwise to uint64 input."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = x + _GOLDEN
        x = (x ^ (x >> np.uint64(30))) * _M1
        x = (x ^ (x >> np.uint64(27))) * _M2
        return x ^ (x >> np.uint64(31))


def goss_sample(gradients, a: float, b: float, seed: int, keys=None):
    """Keep the ``ceil(a n)`` largest-|g| rows plus ``ceil(b n)`` of the rest.

    Returns ``(indices, weights)`` with indices sorted ascending; sampled
    small-gradient rows carry weight ``(1 - a) / b``. ``keys`` are stable
    per-row uint64 identifiers; when given, both the top-set tie-break and the
    random draw follow them rather than row position, so permuting rows
    permutes the result and nothing else.
    """
    g = np.abs(np.asarray(gradients, dtype=float))
    n = len(g)
    if not (0 < a < 1 and 0 < b and a + b <= 1):
        raise ValueError(f"GOSS needs 0 < a < 1, b > 0 and a + b <= 1 (got a={a}, b={b})")
    if n < 1 / b:
        log.info("GOSS: n=%d < 1/b=%.1f, using all rows", n, 1 / b)
        return np.arange(n), np.ones(n)
    keys = np.arange(n, dtype=np.uint64) if keys is None else np.asarray(keys, dtype=np.uint64)
    n_top = min(n, math.ceil(a * n))
    order = np.lexsort((keys, -g))
    top, rest = order[:n_top], order[n_top:]
    n_rand = min(len(rest), math.ceil(b * n))
    priority = mix64(keys[rest] ^ mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
    picked = rest[np.lexsort((keys[rest], priority))[:n_rand]]
    idx = np.concatenate([top, picked])
    w = np.concatenate([np.ones(len(top)), np.full(len(picked), (1 - a) / b)])
    order = np.argsort(idx, kind="stable")
    return idx[order], w[order]
