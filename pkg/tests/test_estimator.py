from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from dcetomo.errors import DegenerateVariance, LengthMismatch, TooFewSamples
from dcetomo.estimator import (
    dce_correlation,
    dce_estimate,
    direct_covariance,
    filter_outliers,
    pearson,
    sample_covariance,
)
from dcetomo.timing import RelativeSeries, TimingRecord

MS = 1_000_000
vals = st.integers(-(10**9), 10**9)


def pairwise_cov(x, y):
    """Oracle: 1/(2n(n-1)) * sum_i sum_j (x_i - x_j)(y_i - y_j), exact."""
    n = len(x)
    s = sum(Fraction(xi - xj) * (yi - yj) for xi, yi in zip(x, y) for xj, yj in zip(x, y))
    return s / (2 * n * (n - 1))


def test_covariance_examples():
    assert sample_covariance([1, 2, 3], [2, 4, 6]) == 2.0
    assert sample_covariance([1, 2, 3], [1, 2, 3]) == 1.0
    assert sample_covariance([3, -1, 8, 2], [5, 5, 5, 5]) == 0.0
    assert sample_covariance([1.5, 2.5, 3.5], [2.0, 4.0, 6.0]) == pytest.approx(2.0)


def test_covariance_errors():
    with pytest.raises(LengthMismatch):
        sample_covariance([1, 2, 3], [1, 2])
    with pytest.raises(TooFewSamples):
        sample_covariance([1], [1])


def test_covariance_matches_numpy_on_floats():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(2, 200))
    assert sample_covariance(x, y) == pytest.approx(np.cov(x, y)[0, 1], rel=1e-12)


@given(st.lists(st.tuples(vals, vals), min_size=2, max_size=12))
def test_covariance_matches_pairwise_oracle(rows):
    x, y = [a for a, _ in rows], [b for _, b in rows]
    assert sample_covariance(x, y) == float(pairwise_cov(x, y))


@given(st.lists(st.tuples(vals, vals), min_size=2, max_size=50), vals, vals)
def test_covariance_shift_invariance_exact(rows, c1, c2):
    x, y = [a for a, _ in rows], [b for _, b in rows]
    assert sample_covariance([a + c1 for a in x], [b + c2 for b in y]) == sample_covariance(x, y)


@given(st.lists(st.tuples(vals, vals), min_size=2, max_size=50), st.integers(-1000, 1000), st.integers(-1000, 1000))
def test_covariance_scale_equivariance(rows, a, c):
    x, y = [p for p, _ in rows], [q for _, q in rows]
    got = sample_covariance([a * v for v in x], [c * v for v in y])
    assert got == pytest.approx(a * c * sample_covariance(x, y), rel=1e-12, abs=1e-300)


@given(st.lists(st.tuples(vals, vals), min_size=2, max_size=50))
def test_covariance_symmetric(rows):
    x, y = [a for a, _ in rows], [b for _, b in rows]
    assert sample_covariance(x, y) == sample_covariance(y, x)


def test_pearson_examples():
    x = [1, 2, 3, 4, 7]
    assert pearson(x, [3 * v + 7 for v in x]) == 1.0
    assert pearson(x, [-v for v in x]) == -1.0
    assert pearson([1, 2, 3], [2, 4, 6]) == 1.0


def test_pearson_degenerate():
    with pytest.raises(DegenerateVariance):
        pearson([1, 2, 3], [4, 4, 4])
    with pytest.raises(DegenerateVariance):
        pearson([1.0, 1.0], [2.0, 3.0])


@given(
    st.lists(st.tuples(vals, vals), min_size=3, max_size=40),
    st.integers(1, 1000),
    st.integers(1, 1000),
    vals,
    vals,
    st.booleans(),
)
def test_pearson_affine_invariance(rows, a, c, b, d, negate):
    x, y = [p for p, _ in rows], [q for _, q in rows]
    assume(len(set(x)) > 1 and len(set(y)) > 1)
    if negate:
        a, c = -a, -c
    r = pearson(x, y)
    assert -1.0 <= r <= 1.0
    assert pearson([a * v + b for v in x], [c * v + d for v in y]) == pytest.approx(r, rel=1e-12, abs=1e-15)


def test_filter_examples():
    s = RelativeSeries(("a", "b"), [0, 0, 0, 0, 9 * MS], [0, 0, 0, 0, 0])
    d_a = [1 * MS, 1 * MS, 1 * MS, 1 * MS, 10 * MS]
    d_b = [2 * MS] * 5
    kept, rep = filter_outliers(s, d_a, d_b, 2.0)
    # mean 2.8 ms, threshold 5.6 ms: only the 10 ms sample (k=5) goes
    assert rep.removed_indices == frozenset({5})
    assert rep.threshold_a == pytest.approx(5.6 * MS)
    assert rep.rule == "true-delay"
    assert len(kept) == 4 and kept.seq == (1, 2, 3, 4)


def test_filter_equal_delays_removes_nothing():
    s = RelativeSeries(("a", "b"), [1, 2, 3], [1, 2, 3])
    kept, rep = filter_outliers(s, [5, 5, 5], [7, 7, 7], 2.0)
    assert kept is s and not rep.removed_indices


def test_filter_paired_deletion_from_path_b():
    s = RelativeSeries(("a", "b"), [1, 2, 3, 4, 5], [1, 2, 3, 4, 5])
    kept, rep = filter_outliers(s, [5] * 5, [1, 1, 1, 1, 40], 2.0)
    assert rep.removed_indices == frozenset({5})
    assert kept.values_a == (1, 2, 3, 4) and kept.values_b == (1, 2, 3, 4)


def test_filter_pseudo_delay_rule():
    s = RelativeSeries(("a", "b"), [-10, -10, -10, -10, 80], [3, 3, 3, 3, 3])
    kept, rep = filter_outliers(s, multiplier=2.0)
    assert rep.rule == "pseudo-delay"
    assert rep.removed_indices == frozenset({5})


def test_filter_rejects_bad_multiplier():
    s = RelativeSeries(("a", "b"), [1, 2], [1, 2])
    with pytest.raises(ValueError):
        filter_outliers(s, multiplier=1.0)


def _record_from_table(d_a, d_b, tf, offsets=(123456789, -987654321, 555), delta=None):
    of, oa, ob = offsets
    return TimingRecord(
        ("a", "b"),
        [t + of for t in tf],
        [t + x + oa for t, x in zip(tf, d_a)],
        [t + x + ob for t, x in zip(tf, d_b)],
        delta_const=delta,
    )


def test_dce_zero_jitter_is_exactly_zero():
    tf = [k * 1000 for k in range(10)]
    rec = _record_from_table([400] * 10, [650] * 10, tf, delta=1000)
    assert dce_estimate(rec).value == 0.0


def test_dce_on_small_table_equals_bruteforce():
    # hand-made delay table, n = 5 after the baseline
    d_a = [500, 620, 540, 710, 505, 580]
    d_b = [430, 560, 470, 600, 450, 480]
    tf = [0, 5000, 10500, 14000, 21000, 25000]
    rec = _record_from_table(d_a, d_b, tf)
    ca = [x - d_a[0] for x in d_a[1:]]  # [120, 40, 210, 5, 80]
    cb = [x - d_b[0] for x in d_b[1:]]  # [130, 40, 170, 20, 50]
    # means 91 and 82; centered products 1392+2142+10472+5332+352 = 19690
    assert float(pairwise_cov(ca, cb)) == 19690 / 4
    est = dce_estimate(rec)
    assert est.value == 4922.5
    assert est.n_used == 5 and est.mode == "schedule"
    assert direct_covariance(d_a[1:], d_b[1:]) == est.value


def test_direct_covariance_constant_b():
    assert direct_covariance([1, 5, 2, 8], [3, 3, 3, 3]) == 0.0


def test_dce_filter_path_delays_align_after_missing():
    tf = [k * 1000 for k in range(6)]
    rec = TimingRecord(("a", "b"), tf,
                       [t + 10 for t in tf[:3]] + [None] + [t + 10 for t in tf[4:]],
                       [t + 20 for t in tf], delta_const=1000)
    est = dce_estimate(rec, 2.0, [10] * 4, [20] * 4)
    assert est.n_used == 4 and est.filter.removed_indices == frozenset()


def test_dce_too_few_after_filter():
    tf = [k * 1000 for k in range(4)]
    rec = _record_from_table([1, 1, 1, 100], [1, 1, 100, 1], tf, delta=1000)
    with pytest.raises(TooFewSamples):
        dce_estimate(rec, 1.5, [1, 1, 100], [1, 100, 1])


def test_dce_correlation_shared_component():
    rng = np.random.default_rng(5)
    s = rng.integers(0, 100_000, 400)
    d_a = (s + rng.integers(0, 100_000, 400)).tolist()
    d_b = (s + rng.integers(0, 100_000, 400)).tolist()
    rec = _record_from_table(d_a, d_b, [k * 10**6 for k in range(400)], delta=10**6)
    r = dce_correlation(rec).value
    # equal shared and private variance: correlation near 1/2
    assert 0.35 < r < 0.65
