"""Estimators of the number of true null hypotheses m0.

All scalar estimators reduce over the last axis, so a 2-D array of
p-value rows yields one estimate per row.
"""
from __future__ import annotations

import enum

import numpy as np

from .core import ThresholdSequence, _frozen, check_q
from .errors import EmptyInputError, LambdaOutOfRangeError, MissingCorrectionError, OutOfRangeError, ValidationError

# largest double below 1; keeps -log(1-p) finite at p == 1
LOG_CLAMP = 1.0 - 2.0**-52


class EstimatorKind(str, enum.Enum):
    SUM_RAW = "sum"
    SUM_CORRECTED = "sum-corrected"
    LOG_RAW = "log"
    LOG_CORRECTED = "log-corrected"
    STS = "sts"
    BKY_LOCAL = "bky"
    ORACLE = "oracle"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for kind in cls:
            if key in (kind.value, kind.name.lower().replace("_", "-")):
                return kind
        raise ValidationError(f"unknown estimator {value!r}")

    @property
    def is_scalar(self) -> bool:
        return self is not EstimatorKind.BKY_LOCAL


def _pvals(p):
    p = np.asarray(p, dtype=float)
    if p.size == 0 or p.shape[-1] == 0:
        raise EmptyInputError("p-value vector is empty")
    if not np.all((p >= 0.0) & (p <= 1.0)):
        raise OutOfRangeError("p-values must lie in [0, 1]")
    return p


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def estimate_m0_sum_raw(p):
    """Twice the sum of the p-values; unbiased for m under the global null."""
    return _scalar(2.0 * np.sum(_pvals(p), axis=-1))


def estimate_m0_sum_corrected(p, factors, drop_one: bool = False):
    """``C(m) * min(m, max(s(m), 2*sum(p)))``.

    ``factors`` is a :class:`~ibhfdr.correction.CorrectionFactors` or a
    :class:`~ibhfdr.correction.CorrectionTable`. With ``drop_one=True`` the
    input holds m-1 values and the factors (and the cap) of the full m are
    used, which is the leave-one-out estimator of the FDR bound.
    """
    p = _pvals(p)
    n = p.shape[-1]
    m = n + 1 if drop_one else n
    cf = factors.get(m) if hasattr(factors, "get") else factors
    if cf is None or cf.m != m:
        raise MissingCorrectionError(m)
    raw = 2.0 * np.sum(p, axis=-1)
    return _scalar(cf.c * np.minimum(float(m), np.maximum(cf.s, raw)))


def estimate_m0_log_raw(p):
    """``-sum(log(1 - p))`` with p clamped just below one."""
    p = np.minimum(_pvals(p), LOG_CLAMP)
    return _scalar(-np.sum(np.log1p(-p), axis=-1))


def estimate_m0_log_corrected(p):
    return _scalar(2.0 + np.asarray(estimate_m0_log_raw(p)))


def check_lambda(lam) -> float:
    lam = float(lam)
    if not (0.0 < lam < 1.0):
        raise LambdaOutOfRangeError(f"lambda must lie strictly inside (0, 1), got {lam}")
    return lam


def estimate_m0_sts(p, lam: float = 0.5):
    """``(m + 1 - #{p <= lam}) / (1 - lam)``; deliberately not capped at m."""
    lam = check_lambda(lam)
    p = _pvals(p)
    m = p.shape[-1]
    r = np.count_nonzero(p <= lam, axis=-1)
    return _scalar((m + 1 - r) / (1.0 - lam))


def bky_threshold_sequence(m: int, q: float) -> ThresholdSequence:
    """Thresholds ``i*q / (m + 1 - i*(1-q))``, meant for the step-down engine."""
    m = int(m)
    if m < 1:
        raise ValidationError(f"m must be >= 1, got {m}")
    q = check_q(q)
    i = np.arange(1, m + 1, dtype=float)
    return ThresholdSequence(_frozen(i * q / (m + 1 - i * (1.0 - q))), "bky")


def estimate_m0(p, kind, *, lam: float = 0.5, m0=None, table=None, drop_one: bool = False):
    """Dispatch to a scalar estimator by kind."""
    kind = EstimatorKind.parse(kind)
    if kind is EstimatorKind.SUM_RAW:
        return estimate_m0_sum_raw(p)
    if kind is EstimatorKind.SUM_CORRECTED:
        if table is None:
            n = np.shape(p)[-1]
            raise MissingCorrectionError(n + 1 if drop_one else n)
        return estimate_m0_sum_corrected(p, table, drop_one=drop_one)
    if kind is EstimatorKind.LOG_RAW:
        return estimate_m0_log_raw(p)
    if kind is EstimatorKind.LOG_CORRECTED:
        return estimate_m0_log_corrected(p)
    if kind is EstimatorKind.STS:
        return estimate_m0_sts(p, lam)
    if kind is EstimatorKind.ORACLE:
        if m0 is None:
            raise ValidationError("oracle estimator needs the true m0")
        shape = np.shape(p)[:-1]
        return _scalar(np.full(shape, float(m0)))
    raise ValidationError("the BKY estimator is rank dependent; use bky_threshold_sequence")
