"""Per-dimension Mann-Whitney U tests and harmonic-mean p-value summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

EXACT_MAX_TOTAL = 20
SUBSAMPLE_SIZE = 200
SIGNIFICANCE_NEG_LOG10 = 3.0  # p = 0.001 reference line
# Normal-approximation p-values can underflow for huge populations.
_P_FLOOR = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class UTestResult:
    u_statistic: float
    p_value: float
    method: str  # "exact" or "normal_approx"
    dimension_index: int | None = None


@lru_cache(maxsize=None)
def u_null_counts(n: int, m: int) -> tuple[int, ...]:
    """Number of rank arrangements giving U = 0..n*m for tie-free samples of size n and m.

    Uses the recurrence f(n, m, u) = f(n-1, m, u-m) + f(n, m-1, u): the
    largest pooled value belongs either to the first sample (it beats all m
    values of the second) or to the second.
    """
    if n == 0 or m == 0:
        return (1,) + (0,) * (n * m)
    a = u_null_counts(n - 1, m)
    b = u_null_counts(n, m - 1)
    out = [0] * (n * m + 1)
    for u, c in enumerate(a):
        out[u + m] += c
    for u, c in enumerate(b):
        out[u] += c
    return tuple(out)


def _exact_two_sided(u: int, n: int, m: int) -> float:
    counts = u_null_counts(n, m)
    total = sum(counts)
    lower = sum(counts[: u + 1])
    upper = sum(counts[u:])
    return min(1.0, 2 * min(lower, upper) / total)


def _tie_term(pooled: np.ndarray) -> float:
    _, t = np.unique(pooled, return_counts=True)
    t = t.astype(np.float64)
    return float(np.sum(t**3 - t))


def mann_whitney_u(x: Sequence[float], y: Sequence[float], exact: bool | None = None) -> UTestResult:
    """Two-sided Mann-Whitney U test.

    ``U`` is the number of pairs with ``x_i > y_j`` plus half the ties. The
    p-value comes from the exact null distribution when the samples are
    tie-free and ``len(x) + len(y) <= 20`` (or when ``exact`` forces it),
    and from the tie-corrected normal approximation with continuity
    correction otherwise.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    n, m = len(x), len(y)
    if n == 0 or m == 0:
        raise ValueError("both samples must be non-empty")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("samples must be finite")

    pooled = np.concatenate([x, y])
    ranks = rankdata(pooled)
    u = float(ranks[:n].sum() - n * (n + 1) / 2)
    ties = _tie_term(pooled)

    if exact is None:
        exact = ties == 0 and n + m <= EXACT_MAX_TOTAL
    if exact:
        if ties != 0:
            raise ValueError("exact p-values are only defined for tie-free samples")
        return UTestResult(u, _exact_two_sided(int(round(u)), n, m), "exact")

    N = n + m
    var = n * m / 12.0 * ((N + 1) - ties / (N * (N - 1)))
    if var <= 0:
        # every value identical
        return UTestResult(u, 1.0, "normal_approx")
    z = max(abs(u - n * m / 2.0) - 0.5, 0.0) / math.sqrt(var)
    p = min(1.0, 2.0 * float(ndtr(-z)))
    return UTestResult(u, max(p, _P_FLOOR), "normal_approx")


def hmp(p_values: Sequence[float], weights: Sequence[float] | None = None) -> float:
    """Weighted harmonic mean ``sum(w) / sum(w / p)``; equal weights by default."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size == 0:
        raise ValueError("no p-values")
    if np.any(~np.isfinite(p)) or np.any(p <= 0) or np.any(p > 1):
        raise ValueError("p-values must lie in (0, 1]")
    w = np.full(p.shape, 1.0 / p.size) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != p.shape or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative, match p_values and not all vanish")
    return float(w.sum() / np.sum(w / p))


@dataclass
class PopulationComparison:
    label_a: str
    label_b: str
    per_dim: list[UTestResult]
    hmp: float
    n_a: int
    n_b: int
    extra: dict = field(default_factory=dict)

    @property
    def neg_log10_hmp(self) -> float:
        return -math.log10(self.hmp)

    @property
    def significant(self) -> bool:
        return self.neg_log10_hmp > SIGNIFICANCE_NEG_LOG10

    def summary(self) -> dict:
        return {
            "label_a": self.label_a,
            "label_b": self.label_b,
            "n_a": self.n_a,
            "n_b": self.n_b,
            "hmp": self.hmp,
            "neg_log10_hmp": self.neg_log10_hmp,
            "significant": self.significant,
            "significance_line": SIGNIFICANCE_NEG_LOG10,
            "neg_log10_p": [-math.log10(r.p_value) for r in self.per_dim],
        }


def compare_populations(
    a: np.ndarray,
    b: np.ndarray,
    label_a: str = "A",
    label_b: str = "B",
    subsample: int | None = SUBSAMPLE_SIZE,
    seed: int = 0,
) -> PopulationComparison:
    """Dimension-wise U tests between two sets of average feature vectors.

    ``a`` and ``b`` are (subjects x dimensions). Both populations are first
    subsampled without replacement to a common size of
    ``min(subsample, len(a), len(b))`` so that sample size does not drive
    significance.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("both populations must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if subsample is not None:
        k = min(subsample, a.shape[0], b.shape[0])
        rng = np.random.default_rng(seed)
        a = a[np.sort(rng.choice(a.shape[0], k, replace=False))]
        b = b[np.sort(rng.choice(b.shape[0], k, replace=False))]
    results = []
    for d in range(a.shape[1]):
        r = mann_whitney_u(a[:, d], b[:, d])
        results.append(UTestResult(r.u_statistic, r.p_value, r.method, d))
    return PopulationComparison(label_a, label_b, results, hmp([r.p_value for r in results]), a.shape[0], b.shape[0])


def disjoint_halves(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Random split of ``range(n)`` into two disjoint index sets (for the H vs H* control)."""
    order = np.random.default_rng(seed).permutation(n)
    return np.sort(order[: n // 2]), np.sort(order[n // 2 :])


def write_comparison_csv(comp: PopulationComparison, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dimension", "u", "p", "neg_log10_p"])
        for r in comp.per_dim:
            w.writerow([r.dimension_index, repr(r.u_statistic), repr(r.p_value), repr(-math.log10(r.p_value))])
        w.writerow(["HMP", "", repr(comp.hmp), repr(comp.neg_log10_hmp)])
