"""Nonparametric and parametric strategy comparisons.

Mann-Whitney U on rolling-Sharpe series (normal approximation, midranks,
tie-corrected variance, continuity correction), a Welch-style two-sample
z-test for repeated-run Sharpe means, and day-wise outperformance counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError, NumericalError
from .metrics import RollingSharpeSeries

__all__ = [
    "TestResult",
    "mann_whitney_u",
    "z_test_two_sample",
    "z_test_one_sample",
    "outperformance_fraction",
]


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n1: int
    n2: int
    method: str  # "mann_whitney_u" | "z_test"
    alternative: str = "two_sided"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n1": self.n1,
            "n2": self.n2,
            "alternative": self.alternative,
        }


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _midranks(pooled: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties assigned the mean of their covered ranks."""
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(pooled.size, dtype=np.float64)
    sorted_vals = pooled[order]
    i = 0
    while i < pooled.size:
        j = i
        while j + 1 < pooled.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _clean_sample(sample, name: str) -> np.ndarray:
    arr = np.asarray(sample, dtype=np.float64).ravel()
    if arr.size == 0:
        raise DataError(f"{name} is empty")
    if np.any(np.isnan(arr)):
        raise DataError(f"{name} contains missing values; drop them before testing")
    return arr


def mann_whitney_u(sample_a, sample_b, alternative: str = "two_sided") -> TestResult:
    """Rank-sum test of whether ``sample_a`` tends larger than ``sample_b``.

    The reported statistic is U for the first sample (the number of
    (a, b) pairs with a > b, counting ties as half), so swapping the
    samples maps U to n1*n2 - U.
    """
    if alternative not in ("two_sided", "greater", "less"):
        raise DataError(f"unknown alternative {alternative!r}")
    a = _clean_sample(sample_a, "sample_a")
    b = _clean_sample(sample_b, "sample_b")
    n1, n2 = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)

    n = n1 + n2
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts))
    if tie_term >= n**3 - n:
        raise NumericalError("all values tied across both samples")
    sigma = math.sqrt(n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0))))
    mu = n1 * n2 / 2.0

    # continuity correction of 0.5 toward the mean
    if alternative == "two_sided":
        z = (abs(u - mu) - 0.5) / sigma
        p = min(1.0, 2.0 * _normal_sf(max(z, 0.0)))
    elif alternative == "greater":
        z = (u - mu - 0.5) / sigma
        p = _normal_sf(z)
    else:
        z = (u - mu + 0.5) / sigma
        p = 1.0 - _normal_sf(z)
    return TestResult(u, p, n1, n2, "mann_whitney_u", alternative)


def z_test_two_sample(means_a: Sequence[float], means_b: Sequence[float]) -> TestResult:
    """Two-tailed z-test for a difference in means of independent samples.

    Unequal variances (Welch denominator) with a standard-normal reference,
    appropriate for comparing Sharpe means across repeated training runs.
    """
    a = _clean_sample(means_a, "means_a")
    b = _clean_sample(means_b, "means_b")
    if a.size < 2 or b.size < 2:
        raise DataError("z-test needs at least 2 entries per sample")
    var_a = a.var(ddof=1)
    var_b = b.var(ddof=1)
    if var_a == 0.0 and var_b == 0.0:
        if a.mean() == b.mean():
            return TestResult(0.0, 1.0, a.size, b.size, "z_test")
        raise NumericalError("z-test undefined: both samples have zero variance")
    z = (a.mean() - b.mean()) / math.sqrt(var_a / a.size + var_b / b.size)
    p = 2.0 * _normal_sf(abs(z))
    return TestResult(float(z), min(1.0, p), a.size, b.size, "z_test")


def z_test_one_sample(sample: Sequence[float], reference_mean: float) -> TestResult:
    """Two-tailed z-test of a sample mean against a reported reference value."""
    a = _clean_sample(sample, "sample")
    if a.size < 2:
        raise DataError("z-test needs at least 2 entries")
    var = a.var(ddof=1)
    if var == 0.0:
        if a.mean() == reference_mean:
            return TestResult(0.0, 1.0, a.size, 0, "z_test")
        raise NumericalError("z-test undefined: sample has zero variance")
    z = (a.mean() - reference_mean) / math.sqrt(var / a.size)
    p = 2.0 * _normal_sf(abs(z))
    return TestResult(float(z), min(1.0, p), a.size, 0, "z_test")


def paired_valid_values(series_a: RollingSharpeSeries, series_b: RollingSharpeSeries):
    """Align two rolling series and drop dates where either value is missing."""
    if len(series_a) != len(series_b):
        raise DataError("rolling series lengths differ")
    if series_a.dates is not None and series_b.dates is not None:
        if not np.array_equal(series_a.dates, series_b.dates):
            raise DataError("rolling series date indices differ")
    keep = ~(np.isnan(series_a.values) | np.isnan(series_b.values))
    return series_a.values[keep], series_b.values[keep]


def outperformance_fraction(series_a: RollingSharpeSeries, series_b: RollingSharpeSeries) -> float:
    """Fraction of shared dates where a strictly exceeds b; ties do not count."""
    a, b = paired_valid_values(series_a, series_b)
    if a.size == 0:
        raise DataError("no overlapping valid dates to compare")
    return float(np.mean(a > b))
