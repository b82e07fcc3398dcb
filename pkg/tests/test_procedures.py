import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ibhfdr.core import Mode, linear_thresholds, run_engine, sort_pvalues
from ibhfdr.correction import CorrectionTable
from ibhfdr.errors import MissingCorrectionError, ValidationError
from ibhfdr.estimators import EstimatorKind
from ibhfdr.procedures import (
    ProcedureKind,
    ProcedureSpec,
    adaptive_qvalues,
    apply_procedure,
    bh_qvalues,
    compare_datasets,
    rejection_counts,
)

P3 = (0.01, 0.02, 0.5)
TABLE = CorrectionTable(compute_missing=True)


def test_bh95_example():
    out = apply_procedure(P3, ProcedureSpec("bh95", q=0.1))
    assert out.r == 2
    assert out.m0_hat == 3
    assert out.mode is Mode.UP
    np.testing.assert_array_equal(out.rejected_indices, [0, 1])


def test_oracle_example():
    out = apply_procedure(P3, ProcedureSpec("orc", q=0.1, m0=1))
    np.testing.assert_allclose(out.thresholds.thresholds, (0.1, 0.2, 0.3))
    assert out.r == 2


def test_oracle_zero_rejects_everything():
    out = apply_procedure((0.9, 1.0, 0.3), ProcedureSpec("orc", q=0.05, m0=0))
    assert out.r == 3
    with pytest.raises(ValidationError):
        apply_procedure(P3, ProcedureSpec("orc"))
    with pytest.raises(ValidationError):
        apply_procedure(P3, ProcedureSpec("orc", m0=4))


def test_sts_example():
    out = apply_procedure((0.001, 0.002, 0.6, 0.9), ProcedureSpec("sts", q=0.05, lam=0.5))
    assert out.m0_hat == 6.0
    np.testing.assert_allclose(out.thresholds.thresholds, np.minimum(np.arange(1, 5) * 0.05 / 6, 0.5))
    assert out.r == 2


def test_ibhlog_example():
    out = apply_procedure((0.001, 0.001), ProcedureSpec("ibhlog", "up", q=0.1))
    assert out.m0_hat == pytest.approx(2 - 2 * math.log(0.999), rel=1e-14)
    assert out.m0_hat == pytest.approx(2.002001, abs=1e-6)
    np.testing.assert_allclose(out.thresholds.thresholds, (0.04995, 0.09990), atol=1e-5)
    assert out.r == 2


def test_bky_records_local_estimate():
    out = apply_procedure((0.001, 0.002, 0.9), ProcedureSpec("bky", q=0.05))
    assert out.mode is Mode.DOWN
    assert out.r == 2
    assert out.m0_hat == pytest.approx(4 - 2 * 0.95)


def test_mode_locks_and_defaults():
    assert ProcedureSpec("ibhsum").mode is Mode.DOWN
    assert ProcedureSpec("ibhlog").mode is Mode.DOWN
    assert ProcedureSpec("bh95").mode is Mode.UP
    assert ProcedureSpec("bky").mode is Mode.DOWN
    assert ProcedureSpec("sts").mode is Mode.UP
    with pytest.raises(ValidationError):
        ProcedureSpec("bky", "up")
    with pytest.raises(ValidationError):
        ProcedureSpec("sts", "down")
    with pytest.raises(ValidationError):
        ProcedureSpec("bh95", q=0)
    with pytest.raises(ValidationError):
        ProcedureSpec("magic")
    assert ProcedureSpec.parse("ibhsum:up", q=0.1).label == "ibhsum-up"
    assert ProcedureKind.parse("BH") is ProcedureKind.BH95


def test_ibhsum_single_hypothesis_is_bh95():
    for p in (0.01, 0.07, 1.0):
        out = apply_procedure([p], ProcedureSpec("ibhsum", q=0.05))
        assert out.m0_hat == 1.0
        assert out.r == apply_procedure([p], ProcedureSpec("bh95", q=0.05)).r


def test_ibhsum_needs_factors():
    with pytest.raises(MissingCorrectionError):
        apply_procedure(P3, ProcedureSpec("ibhsum"))
    out = apply_procedure(P3, ProcedureSpec("ibhsum"), TABLE)
    cf = TABLE.get(3)
    assert out.m0_hat == pytest.approx(cf.c * min(3, max(cf.s, 2 * sum(P3))))


def test_bh95_equals_linear_thresholds_with_m():
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = rng.uniform(size=40) ** 3
        for mode in Mode:
            a = apply_procedure(p, ProcedureSpec("bh95", mode, q=0.1))
            sp = sort_pvalues(p)
            b = run_engine(sp, linear_thresholds(40, 0.1, 40), mode)
            assert a.r == b.r
            np.testing.assert_array_equal(a.thresholds.thresholds, b.thresholds.thresholds)
            np.testing.assert_array_equal(a.rejected_indices, b.rejected_indices)


@pytest.mark.parametrize("p, expect", [(P3, (0.03, 0.03, 0.5)), ((1.0,), (1.0,)), ((0.5, 0.5), (0.5, 0.5))])
def test_bh_qvalue_examples(p, expect):
    np.testing.assert_allclose(bh_qvalues(p).qvals, expect, rtol=1e-14)


def test_adaptive_qvalue_examples():
    qv = adaptive_qvalues(P3, "sum")
    assert qv.m0_hat == pytest.approx(1.06)
    np.testing.assert_allclose(qv.qvals, (0.0106, 0.0106, 0.5 * 1.06 / 3), rtol=1e-12)
    qv = adaptive_qvalues((0.5, 0.5), "log-corrected")
    np.testing.assert_allclose(qv.qvals, 0.5 * (2 + 2 * math.log(2)) / 2, rtol=1e-12)
    assert qv.qvals[0] == pytest.approx(0.8466, abs=1e-4)
    big = adaptive_qvalues((0.9, 0.95), "sts")
    assert np.all(big.qvals == 1.0)
    with pytest.raises(ValidationError):
        adaptive_qvalues(P3, "bky")
    with pytest.raises(MissingCorrectionError):
        adaptive_qvalues(P3, EstimatorKind.SUM_CORRECTED)


pvec = arrays(np.float64, st.integers(1, 50), elements=st.floats(0.0, 1.0))


@settings(max_examples=200, deadline=None)
@given(pvec)
def test_qvalue_consistency_with_step_up(p):
    qv = bh_qvalues(p).qvals
    sp = sort_pvalues(p)
    q_sorted = qv[sp.perm]
    assert np.all(np.diff(q_sorted) >= 0)
    assert np.all((qv >= 0) & (qv <= 1))
    for q in (0.01, 0.05, 0.1, 0.2, 0.5, 1.0):
        r = apply_procedure(p, ProcedureSpec("bh95", q=q)).r
        for i in range(1, sp.m + 1):
            if abs(q_sorted[i - 1] - q) <= 1e-12 * q:
                continue  # i*q/m and m*p/i may round differently at a tie
            assert (q_sorted[i - 1] <= q) == (r >= i)


@settings(max_examples=200, deadline=None)
@given(pvec, st.sampled_from(["sum", "log", "log-corrected", "sts"]))
def test_adaptive_below_plain_when_estimate_small(p, kind):
    qv = adaptive_qvalues(p, kind)
    base = bh_qvalues(p).qvals
    if qv.m0_hat <= p.size:
        assert np.all(qv.qvals <= base + 1e-15)
    assert np.all((qv.qvals >= 0) & (qv.qvals <= 1))


@settings(max_examples=150, deadline=None)
@given(pvec, st.sampled_from([0.01, 0.05, 0.2]))
def test_ibh_down_never_exceeds_up(p, q):
    for kind in ("ibhsum", "ibhlog"):
        up = apply_procedure(p, ProcedureSpec(kind, "up", q=q), TABLE).r
        down = apply_procedure(p, ProcedureSpec(kind, "down", q=q), TABLE).r
        assert down <= up


@settings(max_examples=150, deadline=None)
@given(pvec, st.sampled_from([0.01, 0.05, 0.2]))
def test_small_estimate_rejects_at_least_bh95(p, q):
    for kind in ("ibhsum", "ibhlog"):
        for mode in Mode:
            out = apply_procedure(p, ProcedureSpec(kind, mode, q=q), TABLE)
            if out.m0_hat <= p.size:
                assert out.r >= apply_procedure(p, ProcedureSpec("bh95", mode, q=q)).r


@settings(max_examples=200, deadline=None)
@given(pvec, st.floats(0.05, 0.95), st.sampled_from([0.05, 0.5, 1.0]))
def test_sts_never_rejects_above_lambda(p, lam, q):
    out = apply_procedure(p, ProcedureSpec("sts", q=q, lam=lam))
    assert np.all(p[out.rejected_indices] <= lam)


BATCH_CASES = [
    (name, mode)
    for name in ("bh95", "orc", "bky", "sts", "ibhsum", "ibhlog")
    for mode in (None, "up", "down")
    if (name, mode) not in {("bky", "up"), ("sts", "down")}
]


@pytest.mark.parametrize("name, mode", BATCH_CASES)
def test_batch_counts_match_scalar_path(name, mode):
    spec = ProcedureSpec(name, mode, q=0.1, m0=12 if name == "orc" else None)
    rng = np.random.default_rng(7)
    rows = rng.uniform(size=(300, 30))
    rows[:, :15] **= 4
    rows = np.sort(rows, axis=1)
    r, m0_hat = rejection_counts(rows, spec, TABLE)
    for k in range(rows.shape[0]):
        out = apply_procedure(rows[k], spec, TABLE)
        assert r[k] == out.r
        assert m0_hat[k] == pytest.approx(out.m0_hat, rel=1e-12)


def test_compare_ratios_and_summary():
    # BH95 rejects the 10 zeros; the adaptive procedures reject more or the same
    a = np.r_[np.zeros(10), np.full(10, 0.9)]
    rng = np.random.default_rng(0)
    b = rng.uniform(size=200) ** 6
    none = np.full(5, 0.9)
    report = compare_datasets({"b": b, "a": a, "none": none}, [ProcedureSpec("ibhlog"), ProcedureSpec("bh95")], q_levels=[0.05])
    assert [r.dataset for r in report.rows][::2] == ["a", "b", "none"]
    rows = {(r.dataset, r.procedure): r for r in report.rows}
    assert rows["a", "bh95-up"].ratio == 1.0
    assert rows["none", "ibhlog-down"].ratio is None
    assert rows["none", "ibhlog-down"].error is None
    summary = {s.procedure: s for s in report.summary}
    assert summary["bh95-up"].mean == 1.0
    assert summary["bh95-up"].n == 2
    assert summary["bh95-up"].n_undefined == 1


def test_compare_summary_statistics():
    # construct datasets with ratios 1.2 and 1.3 using the oracle
    def dataset(r_bh, r_extra):
        return np.r_[np.full(r_bh, 1e-9), np.full(r_extra, 0.01), np.full(100 - r_bh - r_extra, 1.0)]

    specs = [ProcedureSpec("orc", "up", m0=10)]
    report = compare_datasets({"x": dataset(10, 2), "y": dataset(10, 3)}, specs, q_levels=[0.05])
    ratios = sorted(r.ratio for r in report.rows)
    assert ratios == pytest.approx([1.2, 1.3])
    s = report.summary[0]
    assert s.mean == pytest.approx(1.25)
    assert s.std == pytest.approx(0.0707107, abs=1e-6)


def test_compare_records_errors_without_aborting():
    report = compare_datasets({"ok": [0.001, 0.5], "bad": [0.2, 1.7]}, [ProcedureSpec("ibhlog")], q_levels=[0.05, 0.1])
    bad = [r for r in report.rows if r.dataset == "bad"]
    assert all(r.error for r in bad)
    assert report.summary[0].n_failed == 1
    ok = [r for r in report.rows if r.dataset == "ok"]
    assert all(r.error is None for r in ok)


def test_compare_parallel_matches_serial():
    rng = np.random.default_rng(4)
    data = {f"d{k}": rng.uniform(size=100) ** 4 for k in range(8)}
    specs = [ProcedureSpec("ibhsum"), ProcedureSpec("ibhlog"), ProcedureSpec("bky"), ProcedureSpec("sts")]
    a = compare_datasets(data, specs, table=TABLE)
    b = compare_datasets(data, specs, table=TABLE, workers=4)
    assert a == b
