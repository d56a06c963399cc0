"""Covariance estimation over detrended arrival series.

Integer inputs (nanosecond durations, the normal case) are handled in exact
integer arithmetic and rounded once at the end, which makes shift invariance
hold bit-for-bit.  Float inputs go through a two-pass numpy computation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateVariance, LengthMismatch, TooFewSamples
from .timing import Pair, RelativeSeries, TimingRecord, build_relative_series

NS2_PER_MS2 = 1e12


@dataclass(frozen=True)
class CovarianceEstimate:
    pair_id: Pair
    value: float  # ns^2
    n_used: int
    mode: str  # "constant" or "schedule"
    filter: Optional["FilterReport"] = None

    @property
    def value_ms2(self) -> float:
        return self.value / NS2_PER_MS2


@dataclass(frozen=True)
class CorrelationEstimate:
    pair_id: Pair
    value: float
    n_used: int


@dataclass(frozen=True)
class FilterReport:
    removed_indices: frozenset  # sender sequence numbers
    threshold_a: float
    threshold_b: float
    multiplier: float
    rule: str  # "true-delay" or "pseudo-delay"


def _as_ints(x) -> Optional[list]:
    arr = np.asarray(x)
    if arr.dtype.kind in "iu":
        return [int(v) for v in arr.tolist()]
    if arr.dtype.kind == "O" and all(isinstance(v, int) for v in arr.tolist()):
        return list(arr.tolist())
    return None


def _check(x, y) -> int:
    if len(x) != len(y):
        raise LengthMismatch(f"lengths differ: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise TooFewSamples(f"need at least 2 samples, got {len(x)}")
    return len(x)


def _exact_comoment(x: list, y: list) -> int:
    # n^2 * sum((x - mean x)(y - mean y)), kept integral by scaling by n
    n = len(x)
    sx, sy = sum(x), sum(y)
    return sum((n * a - sx) * (n * b - sy) for a, b in zip(x, y))


def sample_covariance(x: Sequence, y: Sequence) -> float:
    """Unbiased sample covariance with the ``n - 1`` denominator."""
    n = _check(x, y)
    xi, yi = _as_ints(x), _as_ints(y)
    if xi is not None and yi is not None:
        num = _exact_comoment(xi, yi)
        return num / (n * n * (n - 1))  # int / int is correctly rounded
    xf = np.asarray(x, dtype=float)
    yf = np.asarray(y, dtype=float)
    return float(np.dot(xf - xf.mean(), yf - yf.mean()) / (n - 1))


def pearson(x: Sequence, y: Sequence) -> float:
    """Sample correlation coefficient, clamped to [-1, 1]."""
    n = _check(x, y)
    xi, yi = _as_ints(x), _as_ints(y)
    if xi is not None and yi is not None:
        sxy = _exact_comoment(xi, yi)
        sxx = _exact_comoment(xi, xi)
        syy = _exact_comoment(yi, yi)
        if sxx == 0 or syy == 0:
            raise DegenerateVariance("constant series has no correlation")
        # exact product, one rounding inside the square root
        r = sxy / math.sqrt(sxx * syy)
    else:
        xf = np.asarray(x, dtype=float)
        yf = np.asarray(y, dtype=float)
        cx, cy = xf - xf.mean(), yf - yf.mean()
        sxx, syy = float(cx @ cx), float(cy @ cy)
        if sxx == 0.0 or syy == 0.0:
            raise DegenerateVariance("constant series has no correlation")
        r = float(cx @ cy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def filter_outliers(
    series: RelativeSeries,
    path_delays_a: Optional[Sequence] = None,
    path_delays_b: Optional[Sequence] = None,
    multiplier: float = 2.0,
) -> tuple:
    """Drop samples whose delay on either path exceeds ``multiplier`` x mean.

    With true per-sample delays (simulator context) the rule is applied to
    them directly.  Without them, ``delta' - min(delta')`` stands in as a
    pseudo-delay.  Deletion is paired: a sample removed for one path is
    removed from both.
    """
    if multiplier <= 1:
        raise ValueError(f"multiplier must be > 1, got {multiplier}")
    if (path_delays_a is None) != (path_delays_b is None):
        raise ValueError("supply true delays for both paths or neither")
    if path_delays_a is not None:
        da = np.asarray(path_delays_a, dtype=float)
        db = np.asarray(path_delays_b, dtype=float)
        if len(da) != len(series) or len(db) != len(series):
            raise LengthMismatch("path delays must align with the series")
        rule = "true-delay"
    else:
        va = np.asarray(series.values_a, dtype=float)
        vb = np.asarray(series.values_b, dtype=float)
        da, db = va - va.min(), vb - vb.min()
        rule = "pseudo-delay"
    thr_a = multiplier * float(da.mean())
    thr_b = multiplier * float(db.mean())
    bad = (da > thr_a) | (db > thr_b)
    keep = np.flatnonzero(~bad).tolist()
    removed = frozenset(series.seq[i] for i in np.flatnonzero(bad).tolist())
    report = FilterReport(removed, thr_a, thr_b, multiplier, rule)
    if not removed:
        return series, report
    if len(keep) < 2:
        raise TooFewSamples(f"only {len(keep)} samples survive outlier filtering")
    return series.take(keep), report


def dce_estimate(
    record: TimingRecord,
    filter_multiplier: Optional[float] = None,
    path_delays_a: Optional[Sequence] = None,
    path_delays_b: Optional[Sequence] = None,
) -> CovarianceEstimate:
    """Delay covariance of a receiver pair from arrival timestamps alone.

    ``path_delays_a``/``path_delays_b`` are only consulted by the outlier
    filter and must align with the record's samples ``k = 1..n`` after
    missing-sample removal.
    """
    series = build_relative_series(record)
    report = None
    if filter_multiplier is not None:
        series, report = filter_outliers(series, path_delays_a, path_delays_b, filter_multiplier)
    value = sample_covariance(series.values_a, series.values_b)
    return CovarianceEstimate(record.pair_id, value, len(series), record.mode, report)


def dce_correlation(record: TimingRecord) -> CorrelationEstimate:
    series = build_relative_series(record)
    return CorrelationEstimate(
        record.pair_id, pearson(series.values_a, series.values_b), len(series)
    )


def direct_covariance(d_a: Sequence, d_b: Sequence) -> float:
    """Covariance of true one-way delays; ground truth where they are known."""
    return sample_covariance(d_a, d_b)
