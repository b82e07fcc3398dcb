"""Order statistics, threshold lines and the step-up / step-down engines.

Everything here is a pure function of its inputs. The counting kernels
(:func:`step_up_count`, :func:`step_down_count`) operate on the last axis
so the simulation engine can run them on a whole batch of sorted rows.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import (
    DegenerateEstimatorError,
    EmptyInputError,
    LengthMismatchError,
    NonFiniteError,
    OutOfRangeError,
    ValidationError,
)


class Mode(str, enum.Enum):
    UP = "up"
    DOWN = "down"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"up": cls.UP, "step-up": cls.UP, "down": cls.DOWN, "step-down": cls.DOWN}
        try:
            return aliases[key]
        except KeyError:
            raise ValidationError(f"unknown mode {value!r}; expected 'up' or 'down'") from None


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def as_pvalues(values) -> np.ndarray:
    """Validate a probability vector and return it as a float64 array."""
    p = np.asarray(values, dtype=float)
    if p.ndim != 1:
        p = p.ravel()
    if p.size == 0:
        raise EmptyInputError("p-value vector is empty")
    bad = ~np.isfinite(p) | (p < 0.0) | (p > 1.0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise OutOfRangeError(f"p-value at position {i} is {p[i]!r}, outside [0, 1]", value=float(p[i]))
    return p


@dataclass(frozen=True, eq=False)
class SortedPValues:
    """A p-value vector together with its order statistics.

    ``perm[k]`` is the (0-based) original index of the k-th smallest value;
    ties keep their original order.
    """

    values: np.ndarray
    sorted: np.ndarray
    perm: np.ndarray

    @property
    def m(self) -> int:
        return int(self.values.size)

    def __len__(self):
        return self.m


@dataclass(frozen=True, eq=False)
class ThresholdSequence:
    thresholds: np.ndarray
    label: str = ""

    def __len__(self):
        return int(self.thresholds.size)


@dataclass(frozen=True, eq=False)
class RejectionOutcome:
    r: int
    rejected_indices: np.ndarray
    m0_hat: float
    thresholds: ThresholdSequence
    mode: Mode
    label: str = ""

    @property
    def m(self) -> int:
        return len(self.thresholds)

    def rejected_mask(self) -> np.ndarray:
        mask = np.zeros(self.m, dtype=bool)
        mask[self.rejected_indices] = True
        return mask


def sort_pvalues(values) -> SortedPValues:
    p = as_pvalues(values)
    perm = np.argsort(p, kind="stable")
    return SortedPValues(values=_frozen(p), sorted=_frozen(p[perm]), perm=_frozen(perm))


def step_up_count(sorted_p, thresholds):
    """Largest i with ``p_(i) <= t_i`` (0 when there is none), along the last axis."""
    passed = np.asarray(sorted_p) <= np.asarray(thresholds)
    m = passed.shape[-1]
    last_from_end = np.argmax(passed[..., ::-1], axis=-1)
    return np.where(passed.any(axis=-1), m - last_from_end, 0)


def step_down_count(sorted_p, thresholds):
    """``min{i : p_(i) > t_i} - 1``, or m when every p passes, along the last axis."""
    failed = np.asarray(sorted_p) > np.asarray(thresholds)
    m = failed.shape[-1]
    return np.where(failed.any(axis=-1), np.argmax(failed, axis=-1), m)


def _outcome(sp, t, r, mode, m0_hat):
    return RejectionOutcome(
        r=int(r),
        rejected_indices=_frozen(np.sort(sp.perm[: int(r)])),
        m0_hat=float(m0_hat),
        thresholds=t,
        mode=mode,
        label=t.label,
    )


def _check_lengths(sp, t):
    if len(t) != sp.m:
        raise LengthMismatchError(f"{len(t)} thresholds for {sp.m} p-values")


def step_up(sp: SortedPValues, t: ThresholdSequence, m0_hat: float = float("nan")) -> RejectionOutcome:
    _check_lengths(sp, t)
    r = step_up_count(sp.sorted, t.thresholds)
    return _outcome(sp, t, r, Mode.UP, m0_hat)


def step_down(sp: SortedPValues, t: ThresholdSequence, m0_hat: float = float("nan")) -> RejectionOutcome:
    _check_lengths(sp, t)
    r = step_down_count(sp.sorted, t.thresholds)
    return _outcome(sp, t, r, Mode.DOWN, m0_hat)


def run_engine(sp: SortedPValues, t: ThresholdSequence, mode, m0_hat: float = float("nan")) -> RejectionOutcome:
    if Mode.parse(mode) is Mode.UP:
        return step_up(sp, t, m0_hat)
    return step_down(sp, t, m0_hat)


def check_q(q) -> float:
    q = float(q)
    if not (0.0 < q <= 1.0):
        raise ValidationError(f"FDR level q must lie in (0, 1], got {q}")
    return q


def linear_thresholds(m: int, q: float, m0_hat: float, label: str = "") -> ThresholdSequence:
    """Thresholds ``i*q/m0_hat`` for i = 1..m.

    ``m0_hat = inf`` gives all-zero thresholds; ``m0_hat = 0`` raises
    :class:`DegenerateEstimatorError` and callers decide what it means.
    """
    m = int(m)
    if m < 1:
        raise ValidationError(f"m must be >= 1, got {m}")
    q = check_q(q)
    m0_hat = float(m0_hat)
    if np.isnan(m0_hat) or m0_hat < 0:
        raise ValidationError(f"m0 estimate must be positive, got {m0_hat}")
    if m0_hat == 0:
        raise DegenerateEstimatorError("m0 estimate is zero; thresholds are unbounded")
    i = np.arange(1, m + 1, dtype=float)
    if np.isinf(m0_hat):
        return ThresholdSequence(_frozen(np.zeros(m)), label)
    return ThresholdSequence(_frozen(i * q / m0_hat), label)


def standard_normal_cdf(x):
    """Standard normal CDF.

    Backed by Cephes ``ndtr`` (erf/erfc rational approximations), which is
    accurate to a few ulps and keeps relative precision deep into the
    lower tail. Accepts a scalar or an array.
    """
    a = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("standard_normal_cdf requires finite input")
    out = special.ndtr(a)
    return float(out) if out.ndim == 0 else out
