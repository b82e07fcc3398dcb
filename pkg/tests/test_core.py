import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ibhfdr.core import (
    Mode,
    ThresholdSequence,
    linear_thresholds,
    run_engine,
    sort_pvalues,
    standard_normal_cdf,
    step_down,
    step_down_count,
    step_up,
    step_up_count,
)
from ibhfdr.errors import (
    DegenerateEstimatorError,
    EmptyInputError,
    LengthMismatchError,
    NonFiniteError,
    OutOfRangeError,
    ValidationError,
)

T3 = ThresholdSequence(np.array([0.0333, 0.0667, 0.1]))


def brute_up(p, t):
    """Loop transcription of max{i : p_(i) <= t_i}."""
    r = 0
    for i in range(len(p)):
        if p[i] <= t[i]:
            r = i + 1
    return r


def brute_down(p, t):
    """Loop transcription of min{i : p_(i) > t_i} - 1."""
    for i in range(len(p)):
        if p[i] > t[i]:
            return i
    return len(p)


@pytest.mark.parametrize(
    "values, expect_sorted, expect_perm",
    [
        ((0.5, 0.02, 0.02), (0.02, 0.02, 0.5), (2, 3, 1)),
        ((1.0,), (1.0,), (1,)),
        ((0.9, 0.1, 0.5, 0.3), (0.1, 0.3, 0.5, 0.9), (2, 4, 3, 1)),
    ],
)
def test_sort_examples(values, expect_sorted, expect_perm):
    sp = sort_pvalues(values)
    np.testing.assert_array_equal(sp.sorted, expect_sorted)
    np.testing.assert_array_equal(sp.perm + 1, expect_perm)
    assert sp.m == len(values)


def test_sort_rejects_bad_input():
    with pytest.raises(EmptyInputError):
        sort_pvalues([])
    with pytest.raises(OutOfRangeError):
        sort_pvalues([0.1, 1.5])
    with pytest.raises(OutOfRangeError):
        sort_pvalues([0.1, np.nan])
    with pytest.raises(ValidationError):
        sort_pvalues([-0.1])


def test_sorted_arrays_are_read_only():
    sp = sort_pvalues([0.3, 0.1])
    with pytest.raises(ValueError):
        sp.sorted[0] = 0.0


@pytest.mark.parametrize(
    "p, up, down",
    [
        ((0.01, 0.02, 0.5), 2, 2),
        ((0.04, 0.05, 0.09), 3, 0),
        ((1.0, 1.0, 1.0), 0, 0),
    ],
)
def test_engine_examples(p, up, down):
    sp = sort_pvalues(p)
    assert step_up(sp, T3).r == up
    assert step_down(sp, T3).r == down


def test_step_down_all_pass():
    sp = sort_pvalues([0.001, 0.002])
    out = step_down(sp, ThresholdSequence(np.array([0.05, 0.1])))
    assert out.r == 2
    assert out.mode is Mode.DOWN


def test_boundary_is_inclusive():
    sp = sort_pvalues([0.05, 0.1])
    t = ThresholdSequence(np.array([0.05, 0.1]))
    assert step_up(sp, t).r == 2
    assert step_down(sp, t).r == 2


def test_rejected_indices_are_smallest():
    p = [0.5, 0.01, 0.3, 0.02]
    out = step_up(sort_pvalues(p), ThresholdSequence(np.array([0.05, 0.05, 0.05, 0.05])))
    assert out.r == 2
    np.testing.assert_array_equal(out.rejected_indices, [1, 3])
    np.testing.assert_array_equal(out.rejected_mask(), [False, True, False, True])


def test_length_mismatch():
    with pytest.raises(LengthMismatchError):
        step_up(sort_pvalues([0.1, 0.2]), T3)
    with pytest.raises(LengthMismatchError):
        step_down(sort_pvalues([0.1, 0.2]), T3)


@pytest.mark.parametrize(
    "m, q, m0_hat, expect",
    [
        (3, 0.1, 3, (0.1 / 3, 0.2 / 3, 0.1)),
        (3, 0.1, 1.5, (0.2 / 3, 0.4 / 3, 0.2)),
        (2, 1.0, 2, (0.5, 1.0)),
    ],
)
def test_linear_threshold_examples(m, q, m0_hat, expect):
    np.testing.assert_allclose(linear_thresholds(m, q, m0_hat).thresholds, expect, rtol=1e-15)


def test_linear_threshold_edge_estimates():
    with pytest.raises(DegenerateEstimatorError):
        linear_thresholds(3, 0.1, 0.0)
    np.testing.assert_array_equal(linear_thresholds(3, 0.1, np.inf).thresholds, 0.0)
    with pytest.raises(ValidationError):
        linear_thresholds(3, 0.0, 3)
    with pytest.raises(ValidationError):
        linear_thresholds(3, 1.5, 3)
    with pytest.raises(ValidationError):
        linear_thresholds(0, 0.1, 3)


def test_mode_parse():
    assert Mode.parse("step-up") is Mode.UP
    assert Mode.parse("DOWN") is Mode.DOWN
    with pytest.raises(ValidationError):
        Mode.parse("sideways")


def test_normal_cdf_examples():
    assert standard_normal_cdf(0.0) == 0.5
    assert abs(standard_normal_cdf(1.959964) - 0.975) < 1e-6
    tail = standard_normal_cdf(-8.0)
    assert tail > 0
    assert tail == pytest.approx(6.220960574271785e-16, rel=1e-9)
    with pytest.raises(NonFiniteError):
        standard_normal_cdf(np.inf)
    with pytest.raises(NonFiniteError):
        standard_normal_cdf([0.0, np.nan])


def test_normal_cdf_matches_mpmath_oracle():
    mpmath.mp.dps = 40
    xs = np.linspace(-12, 12, 241)
    got = standard_normal_cdf(xs)
    for x, g in zip(xs, got):
        ref = float(mpmath.ncdf(mpmath.mpf(float(x))))
        assert abs(g - ref) <= 1e-12
        if x < -3:
            assert g == pytest.approx(ref, rel=1e-12)


def test_normal_cdf_symmetry_and_monotone_grid():
    xs = np.linspace(-10, 10, 10_000)
    f = standard_normal_cdf(xs)
    assert np.max(np.abs(f + standard_normal_cdf(-xs) - 1.0)) <= 1e-14
    assert np.all(np.diff(f) >= 0)


pvecs = arrays(np.float64, st.integers(1, 40), elements=st.floats(0.0, 1.0))


@st.composite
def instance(draw):
    p = draw(pvecs)
    m = p.size
    t = np.sort(draw(arrays(np.float64, m, elements=st.floats(0.0, 1.0))))
    return p, t


@settings(max_examples=300, deadline=None)
@given(instance())
def test_engines_match_loop_oracle(data):
    p, t = data
    sp = sort_pvalues(p)
    ts = ThresholdSequence(t)
    assert step_up(sp, ts).r == brute_up(sp.sorted, t)
    assert step_down(sp, ts).r == brute_down(sp.sorted, t)


@settings(max_examples=300, deadline=None)
@given(instance())
def test_step_down_never_exceeds_step_up(data):
    p, t = data
    sp = sort_pvalues(p)
    ts = ThresholdSequence(t)
    assert step_down(sp, ts).r <= step_up(sp, ts).r


@settings(max_examples=300, deadline=None)
@given(instance(), st.data())
def test_raising_thresholds_never_lowers_r(data, extra):
    p, t = data
    bump = extra.draw(arrays(np.float64, t.size, elements=st.floats(0.0, 0.5)))
    sp = sort_pvalues(p)
    for mode in Mode:
        lo = run_engine(sp, ThresholdSequence(t), mode).r
        hi = run_engine(sp, ThresholdSequence(t + bump), mode).r
        assert hi >= lo


@settings(max_examples=200, deadline=None)
@given(pvecs, st.randoms())
def test_sort_is_permutation_invariant(p, rnd):
    idx = list(range(p.size))
    rnd.shuffle(idx)
    a = sort_pvalues(p)
    b = sort_pvalues(p[idx])
    np.testing.assert_array_equal(a.sorted, b.sorted)
    assert np.all(np.diff(a.sorted) >= 0)
    np.testing.assert_array_equal(a.sorted, a.values[a.perm])


@settings(max_examples=200, deadline=None)
@given(pvecs)
def test_all_pass_and_all_fail(p):
    sp = sort_pvalues(p)
    m = sp.m
    ones = ThresholdSequence(np.ones(m))
    assert step_up(sp, ones).r == m
    assert step_down(sp, ones).r == m
    below = ThresholdSequence(np.full(m, -1.0))
    assert step_up(sp, below).r == 0
    assert step_down(sp, below).r == 0


def test_batch_counts_match_rows():
    rng = np.random.default_rng(3)
    rows = np.sort(rng.uniform(size=(200, 30)) ** 3, axis=1)
    t = np.arange(1, 31) * 0.05 / 30
    up = step_up_count(rows, t)
    down = step_down_count(rows, t)
    for k in range(rows.shape[0]):
        assert up[k] == brute_up(rows[k], t)
        assert down[k] == brute_down(rows[k], t)
