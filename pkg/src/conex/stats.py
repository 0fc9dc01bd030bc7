"""Significance test and confidence intervals for comparing runs."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

WILCOXON_MIN_N = 5
WILCOXON_MAX_N = 25


def _signed_rank_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Number of sign assignments giving each value of 2*W+.

    ``counts[k]`` is how many of the ``2**n`` assignments put ``k`` on the
    doubled positive rank sum; exact integer arithmetic.
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks.astype(int):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(diffs: Sequence[float]) -> tuple[float, float]:
    """Two-sided exact Wilcoxon signed-rank test on paired differences.

    Zeros are dropped; tied magnitudes share their average rank. Returns
    ``(W, p)`` with ``W = min(W+, W-)`` and ``p`` from the exact null
    distribution over all sign assignments.
    """
    d = np.asarray(diffs, dtype=np.float64)
    d = d[d != 0]
    n = d.size
    if n < WILCOXON_MIN_N:
        raise ValueError(f"need at least {WILCOXON_MIN_N} non-zero differences, got {n}")
    if n > WILCOXON_MAX_N:
        raise ValueError(f"exact test limited to {WILCOXON_MAX_N} differences, got {n}")
    doubled = np.rint(2 * rankdata(np.abs(d))).astype(int)  # average ranks are half-integers
    w_plus2 = int(doubled[d > 0].sum())
    w_minus2 = int(doubled.sum()) - w_plus2
    w2 = min(w_plus2, w_minus2)
    counts = _signed_rank_counts(doubled)
    tail = sum(counts[: w2 + 1])
    p = min(1.0, 2 * float(tail) / 2**n)
    return w2 / 2, p


def confidence_interval(samples: Sequence[float], z: float = 1.96) -> tuple[float, float]:
    """Mean and half-width ``z * s / sqrt(n)`` with the population (ddof=0) deviation."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least two samples")
    s = float(np.std(x, ddof=0))
    return float(np.mean(x)), z * s / math.sqrt(x.size)
