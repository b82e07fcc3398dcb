"""The named FDR procedures, q-values and the multi-dataset comparison."""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import estimators as est
from .core import (
    Mode,
    RejectionOutcome,
    ThresholdSequence,
    _frozen,
    as_pvalues,
    check_q,
    linear_thresholds,
    run_engine,
    sort_pvalues,
    step_down_count,
    step_up_count,
)
from .errors import DegenerateEstimatorError, MissingCorrectionError, ValidationError
from .estimators import EstimatorKind


class ProcedureKind(str, enum.Enum):
    BH95 = "bh95"
    ORC = "orc"
    BKY = "bky"
    STS = "sts"
    IBHSUM = "ibhsum"
    IBHLOG = "ibhlog"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"bh": cls.BH95, "oracle": cls.ORC}
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            names = "|".join(k.value for k in cls)
            raise ValidationError(f"unknown procedure {value!r}; expected one of {names}") from None


_LOCKED = {ProcedureKind.BKY: Mode.DOWN, ProcedureKind.STS: Mode.UP}
_DEFAULT_MODE = {
    ProcedureKind.BH95: Mode.UP,
    ProcedureKind.ORC: Mode.UP,
    ProcedureKind.IBHSUM: Mode.DOWN,
    ProcedureKind.IBHLOG: Mode.DOWN,
}


@dataclass(frozen=True)
class ProcedureSpec:
    """A procedure plus its parameters.

    ``mode=None`` picks the default: step-down for the IBH procedures,
    step-up for BH95 and the oracle. BKY is always step-down and STS always
    step-up; asking for the other mode is an error. ``m0`` is the true null
    count for the oracle (the simulator fills it in when left as None).
    """

    kind: ProcedureKind
    mode: Mode | None = None
    q: float = 0.05
    lam: float = 0.5
    m0: int | None = None

    def __post_init__(self):
        kind = ProcedureKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.mode is None:
            mode = _LOCKED.get(kind) or _DEFAULT_MODE[kind]
        else:
            mode = Mode.parse(self.mode)
            locked = _LOCKED.get(kind)
            if locked is not None and mode is not locked:
                raise ValidationError(f"{kind.value} is defined as step-{locked.value} only")
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "q", check_q(self.q))
        if kind is ProcedureKind.STS:
            object.__setattr__(self, "lam", est.check_lambda(self.lam))
        if self.m0 is not None:
            if int(self.m0) < 0:
                raise ValidationError(f"oracle m0 must be >= 0, got {self.m0}")
            object.__setattr__(self, "m0", int(self.m0))

    @property
    def label(self) -> str:
        return f"{self.kind.value}-{self.mode.value}"

    @classmethod
    def parse(cls, text: str, **kwargs):
        """Parse ``"ibhsum"`` or ``"ibhsum:up"``; kwargs fill the other fields."""
        name, _, mode = str(text).partition(":")
        return cls(ProcedureKind.parse(name), mode or kwargs.pop("mode", None), **kwargs)


@dataclass(frozen=True, eq=False)
class QValueVector:
    qvals: np.ndarray
    estimator: EstimatorKind | None = None
    m0_hat: float = float("nan")


def _oracle_m0(spec, m, m0):
    m0 = spec.m0 if spec.m0 is not None else m0
    if m0 is None:
        raise ValidationError("the oracle procedure needs the true m0")
    if not 0 <= m0 <= m:
        raise ValidationError(f"oracle m0={m0} outside [0, {m}]")
    return m0


def _procedure_m0_hat(p, spec, table, m0=None):
    kind = spec.kind
    m = np.shape(p)[-1]
    if kind is ProcedureKind.BH95:
        return est.estimate_m0(p, EstimatorKind.ORACLE, m0=m)
    if kind is ProcedureKind.ORC:
        return est.estimate_m0(p, EstimatorKind.ORACLE, m0=_oracle_m0(spec, m, m0))
    if kind is ProcedureKind.STS:
        return est.estimate_m0_sts(p, spec.lam)
    if kind is ProcedureKind.IBHSUM:
        if m == 1:
            # min(m, max(s, .)) can only be 1 here; no factors exist for m = 1
            return np.ones(np.shape(p)[:-1]) if np.ndim(p) > 1 else 1.0
        if table is None:
            raise MissingCorrectionError(m)
        return est.estimate_m0_sum_corrected(p, table)
    if kind is ProcedureKind.IBHLOG:
        return est.estimate_m0_log_corrected(p)
    raise AssertionError(kind)


def apply_procedure(p, spec: ProcedureSpec, table=None) -> RejectionOutcome:
    """Run one procedure on a p-value vector.

    ``table`` (a :class:`~ibhfdr.correction.CorrectionTable` or
    ``CorrectionFactors``) is required for IBHsum. For BKY the recorded
    ``m0_hat`` is the local estimate ``m + 1 - i(1-q)`` at the last
    rejected rank (rank 1 when nothing is rejected).
    """
    sp = sort_pvalues(p)
    m, q = sp.m, spec.q
    if spec.kind is ProcedureKind.BKY:
        t = est.bky_threshold_sequence(m, q)
        out = run_engine(sp, t, Mode.DOWN)
        m0_hat = m + 1 - max(out.r, 1) * (1.0 - q)
        return replace(out, m0_hat=float(m0_hat), label=spec.label)
    m0_hat = float(_procedure_m0_hat(sp.values, spec, table))
    try:
        t = linear_thresholds(m, q, m0_hat, label=spec.label)
    except DegenerateEstimatorError:
        t = ThresholdSequence(_frozen(np.full(m, np.inf)), spec.label)
    if spec.kind is ProcedureKind.STS:
        t = ThresholdSequence(_frozen(np.minimum(t.thresholds, spec.lam)), spec.label)
    out = run_engine(sp, t, spec.mode, m0_hat)
    return replace(out, label=spec.label)


def rejection_counts(sorted_rows, spec: ProcedureSpec, table=None, m0=None):
    """Vectorised rejection counts for a batch of *sorted* p-value rows.

    Returns ``(r, m0_hat)`` arrays with one entry per row. This is the hot
    path of the simulator and must agree with :func:`apply_procedure`.
    """
    rows = np.atleast_2d(np.asarray(sorted_rows, dtype=float))
    n, m = rows.shape
    i = np.arange(1, m + 1, dtype=float)
    if spec.kind is ProcedureKind.BKY:
        thr = est.bky_threshold_sequence(m, spec.q).thresholds
        r = step_down_count(rows, thr)
        return r, m + 1 - np.maximum(r, 1) * (1.0 - spec.q)
    m0_hat = np.broadcast_to(np.asarray(_procedure_m0_hat(rows, spec, table, m0), dtype=float), (n,))
    with np.errstate(divide="ignore"):
        thr = (spec.q * i)[None, :] / m0_hat[:, None]
    if spec.kind is ProcedureKind.STS:
        thr = np.minimum(thr, spec.lam)
    counter = step_up_count if spec.mode is Mode.UP else step_down_count
    return counter(rows, thr), m0_hat


def bh_qvalues(p) -> QValueVector:
    """BH95 adjusted p-values: ``min_{j>=i} m p_(j) / j``, capped at 1."""
    sp = sort_pvalues(p)
    m = sp.m
    raw = m * sp.sorted / np.arange(1, m + 1)
    q_sorted = np.minimum(np.minimum.accumulate(raw[::-1])[::-1], 1.0)
    q = np.empty(m)
    q[sp.perm] = q_sorted
    return QValueVector(qvals=_frozen(q), estimator=None, m0_hat=float(m))


def adaptive_qvalues(p, estimator, *, lam: float = 0.5, table=None, m0=None) -> QValueVector:
    """BH q-values scaled by ``m0_hat / m`` and re-capped at 1."""
    kind = EstimatorKind.parse(estimator)
    if not kind.is_scalar:
        raise ValidationError("adaptive q-values need a scalar m0 estimator")
    base = bh_qvalues(p)
    m = base.qvals.size
    m0_hat = float(est.estimate_m0(as_pvalues(p), kind, lam=lam, m0=m0, table=table))
    q = np.minimum(base.qvals * (m0_hat / m), 1.0)
    return QValueVector(qvals=_frozen(q), estimator=kind, m0_hat=m0_hat)


@dataclass(frozen=True)
class CompareRow:
    dataset: str
    procedure: str
    q: float
    r: int | None
    r_bh95: int | None
    ratio: float | None
    error: str | None = None


@dataclass(frozen=True)
class CompareSummary:
    procedure: str
    q: float
    mean: float
    std: float
    n: int
    n_undefined: int
    n_failed: int


@dataclass(frozen=True)
class CompareReport:
    rows: list
    summary: list


def _compare_one(name, p, specs, q_levels, table):
    rows = []
    for q in q_levels:
        try:
            r_bh = apply_procedure(p, ProcedureSpec(ProcedureKind.BH95, q=q)).r
        except Exception as exc:  # noqa: BLE001 - reported per dataset
            rows += [CompareRow(name, s.label, q, None, None, None, f"{type(exc).__name__}: {exc}") for s in specs]
            continue
        for spec in specs:
            try:
                r = apply_procedure(p, replace(spec, q=q), table).r
            except Exception as exc:  # noqa: BLE001
                rows.append(CompareRow(name, spec.label, q, None, r_bh, None, f"{type(exc).__name__}: {exc}"))
                continue
            ratio = r / r_bh if r_bh > 0 else None
            rows.append(CompareRow(name, spec.label, q, r, r_bh, ratio))
    return rows


def compare_datasets(datasets, specs, q_levels=(0.05, 0.1), table=None, workers: int = 1) -> CompareReport:
    """Ratios of rejections relative to BH95 (step-up), per dataset and level.

    ``datasets`` maps names to p-value vectors (a plain sequence is named
    by position). A zero BH95 count makes the ratio undefined; such entries
    are left out of the mean and counted in ``n_undefined``. Errors in one
    dataset are recorded on its rows and do not stop the batch.
    """
    if not isinstance(datasets, dict):
        datasets = {f"dataset_{k:04d}": v for k, v in enumerate(datasets)}
    if not datasets:
        raise ValidationError("compare_datasets needs at least one dataset")
    names = sorted(datasets)
    q_levels = [check_q(q) for q in q_levels]
    specs = list(specs)
    work = [(n, datasets[n], specs, q_levels, table) for n in names]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda a: _compare_one(*a), work))
    else:
        chunks = [_compare_one(*a) for a in work]
    rows = [row for chunk in chunks for row in chunk]

    summary = []
    for spec in specs:
        for q in q_levels:
            mine = [r for r in rows if r.procedure == spec.label and r.q == q]
            ratios = [r.ratio for r in mine if r.ratio is not None]
            failed = sum(r.error is not None for r in mine)
            undefined = sum(r.error is None and r.ratio is None for r in mine)
            mean = float(np.mean(ratios)) if ratios else math.nan
            std = float(np.std(ratios, ddof=1)) if len(ratios) > 1 else math.nan
            summary.append(CompareSummary(spec.label, q, mean, std, len(ratios), undefined, failed))
    return CompareReport(rows=rows, summary=summary)
