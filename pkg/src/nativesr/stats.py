"""Two-sided Mann-Whitney U test and Bonferroni correction."""
from __future__ import annotations

import itertools
import math
from typing import NamedTuple, Sequence

import numpy as np

__all__ = ["MannWhitneyResult", "mann_whitney_u", "bonferroni", "midranks", "EXACT_MAX_TOTAL"]

# exact enumeration for n + m up to this size (C(12, 6) = 924 splits)
EXACT_MAX_TOTAL = 12


class MannWhitneyResult(NamedTuple):
    statistic: float
    pvalue: float
    method: str


def midranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(v.size, dtype=np.float64)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_p(twice_ranks: np.ndarray, n: int, twice_u: int) -> float:
    # all splits of the pooled sample; integer arithmetic on 2U avoids ties at halves
    total_n = twice_ranks.size
    m = total_n - n
    offset = n * (n + 1)
    ref = abs(twice_u - n * m)
    hits = 0
    count = 0
    r = [int(x) for x in twice_ranks]
    for comb in itertools.combinations(range(total_n), n):
        u2 = sum(r[i] for i in comb) - offset
        count += 1
        if abs(u2 - n * m) >= ref:
            hits += 1
    return hits / count


def _asymptotic_p(ranks: np.ndarray, n: int, m: int, u: float) -> float:
    total_n = n + m
    _, counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(counts.astype(np.float64) ** 3 - counts)) / (total_n * (total_n - 1))
    var = n * m / 12.0 * ((total_n + 1) - tie_term)
    if var <= 0:
        return 1.0
    z = (abs(u - n * m / 2.0) - 0.5) / math.sqrt(var)
    if z <= 0:
        return 1.0
    return min(1.0, max(math.erfc(z / math.sqrt(2.0)), math.ulp(0.0)))


def mann_whitney_u(x: Sequence[float], y: Sequence[float], method: str = "auto") -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test.

    ``U`` counts pairs with ``x_i > y_j`` plus half the ties. With
    ``method="auto"`` the p-value is exact (enumerating every split of the
    pooled sample) when ``len(x) + len(y) <= 12`` and otherwise uses the
    tie-corrected normal approximation with continuity correction.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    n, m = x.size, y.size
    if n == 0 or m == 0:
        raise ValueError("mann_whitney_u needs two non-empty samples")
    if np.isnan(x).any() or np.isnan(y).any():
        raise ValueError("mann_whitney_u samples must not contain NaN")
    ranks = midranks(np.concatenate([x, y]))
    u = float(ranks[:n].sum() - n * (n + 1) / 2.0)
    if method == "auto":
        method = "exact" if n + m <= EXACT_MAX_TOTAL else "asymptotic"
    if method == "exact":
        twice = np.rint(2.0 * ranks).astype(np.int64)
        p = _exact_p(twice, n, int(round(2.0 * u)))
    elif method == "asymptotic":
        p = _asymptotic_p(ranks, n, m, u)
    else:
        raise ValueError(f"unknown method {method!r}")
    return MannWhitneyResult(u, p, method)


def bonferroni(p: float, k: int) -> float:
    if k < 1:
        raise ValueError("comparison count must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return min(1.0, k * p)
