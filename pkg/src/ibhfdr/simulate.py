"""Monte Carlo engine for equicorrelated Gaussian test statistics.

Each replication draws m+1 i.i.d. standard normals Y and forms

    X_i = sqrt(rho) * Y_{m+1} + sqrt(1 - rho) * Y_i   (+ mu1 for i > m0)

so every pair of statistics has correlation rho and the first m0 are null.
Replication k uses its own generator seeded from ``SeedSequence(seed,
spawn_key=(k,))``, so results do not depend on chunking or on the number
of worker processes. Normals come from numpy's ziggurat sampler, which is
exact rather than an approximation.

Within a replication the same instance is fed to every procedure (common
random numbers), which makes paired comparisons between procedures sharp.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from . import estimators as est
from .core import RejectionOutcome, step_up_count
from .correction import CorrectionTable
from .errors import FDRError, LengthMismatchError, NonFiniteError, ValidationError
from .estimators import EstimatorKind
from .procedures import ProcedureKind, ProcedureSpec, rejection_counts

NORMAL_SAMPLER = "numpy-pcg64-ziggurat"
HIST_BINS = 1000


class SimulationError(FDRError):
    def __init__(self, message, rep_index=None):
        super().__init__(message)
        self.rep_index = rep_index


@dataclass(frozen=True)
class SimConfig:
    m: int
    m0: int
    mu1: float = 3.5
    rho: float = 0.0
    q: float = 0.05
    reps: int = 50000
    seed: int = 0

    def __post_init__(self):
        if int(self.m) < 1:
            raise ValidationError(f"m must be >= 1, got {self.m}")
        if not 0 <= int(self.m0) <= int(self.m):
            raise ValidationError(f"m0 must lie in [0, m], got m0={self.m0}, m={self.m}")
        if not 0.0 <= float(self.rho) <= 1.0:
            raise ValidationError(f"rho must lie in [0, 1], got {self.rho}")
        if not 0.0 < float(self.q) <= 1.0:
            raise ValidationError(f"q must lie in (0, 1], got {self.q}")
        if float(self.mu1) < 0 or not math.isfinite(float(self.mu1)):
            raise ValidationError(f"mu1 must be finite and >= 0, got {self.mu1}")
        if int(self.reps) < 1:
            raise ValidationError(f"reps must be >= 1, got {self.reps}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        for name in ("m", "m0", "reps", "seed"):
            object.__setattr__(self, name, int(getattr(self, name)))
        for name in ("mu1", "rho", "q"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def m1(self) -> int:
        return self.m - self.m0


@dataclass(frozen=True)
class ReplicationCounts:
    v: int
    s: int
    r: int
    u: int
    t: int

    @property
    def vr(self) -> float:
        return self.v / max(self.r, 1)


@dataclass(frozen=True, eq=False)
class SimMetrics:
    reps: int
    fdr_hat: float
    fdr_se: float
    power_hat: float  # nan when there are no alternatives
    power_se: float
    vr_std: float
    p_bound: float
    n_bound: int  # replications with V/R+ <= q, counted exactly
    mean_r: float
    mean_r_se: float
    vr_hist: np.ndarray = field(repr=False)

    @property
    def p_bound_se(self) -> float:
        p = self.p_bound
        return math.sqrt(p * (1.0 - p) / self.reps)

    def hist_mean(self) -> float:
        centers = (np.arange(self.vr_hist.size) + 0.5) / self.vr_hist.size
        return float(centers @ self.vr_hist / self.vr_hist.sum())

    def metric(self, name: str) -> tuple[float, float]:
        table = {
            "fdr": (self.fdr_hat, self.fdr_se),
            "power": (self.power_hat, self.power_se),
            "vr_std": (self.vr_std, math.nan),
            "p_bound": (self.p_bound, self.p_bound_se),
            "mean_r": (self.mean_r, self.mean_r_se),
        }
        try:
            return table[name]
        except KeyError:
            raise ValidationError(f"unknown metric {name!r}; expected one of {sorted(table)}") from None


METRICS = ("fdr", "power", "vr_std", "p_bound", "mean_r")


def _rng(seed: int, rep_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(int(rep_index),))))


def _statistics(cfg: SimConfig, start: int, stop: int) -> np.ndarray:
    y = np.empty((stop - start, cfg.m + 1))
    for row, k in enumerate(range(start, stop)):
        y[row] = _rng(cfg.seed, k).standard_normal(cfg.m + 1)
    x = math.sqrt(cfg.rho) * y[:, cfg.m : cfg.m + 1] + math.sqrt(1.0 - cfg.rho) * y[:, : cfg.m]
    x[:, cfg.m0 :] += cfg.mu1
    return x


def generate_instance(cfg: SimConfig, rep_index: int):
    """Test statistics and null mask of replication ``rep_index``."""
    if rep_index < 0:
        raise ValidationError("rep_index must be >= 0")
    z = _statistics(cfg, rep_index, rep_index + 1)[0]
    is_null = np.arange(cfg.m) < cfg.m0
    return z, is_null


def instance_pvalues(z) -> np.ndarray:
    """Two-tailed p-values ``2 * Phi(-|z|)``."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("test statistics must be finite")
    return 2.0 * special.ndtr(-np.abs(z))


def evaluate_replication(outcome: RejectionOutcome, is_null) -> ReplicationCounts:
    is_null = np.asarray(is_null, dtype=bool)
    if is_null.size != outcome.m:
        raise LengthMismatchError(f"{is_null.size} truth labels for {outcome.m} hypotheses")
    m0 = int(is_null.sum())
    r = int(outcome.r)
    v = int(is_null[outcome.rejected_indices].sum())
    s = r - v
    return ReplicationCounts(v=v, s=s, r=r, u=m0 - v, t=(is_null.size - m0) - s)


def _sorted_batch(cfg, start, stop):
    p = instance_pvalues(_statistics(cfg, start, stop))
    order = np.argsort(p, axis=1, kind="stable")
    return np.take_along_axis(p, order, axis=1), order


def _false_rejections(cum_null, r):
    v = np.zeros(r.shape, dtype=np.int64)
    hit = r > 0
    v[hit] = cum_null[np.flatnonzero(hit), r[hit] - 1]
    return v


def _simulate_chunk(cfg, specs, factors, start, stop):
    sorted_p, order = _sorted_batch(cfg, start, stop)
    cum_null = np.cumsum(order < cfg.m0, axis=1)
    out = []
    for spec in specs:
        try:
            r, _ = rejection_counts(sorted_p, spec, factors, m0=cfg.m0)
        except Exception as exc:
            for row in range(sorted_p.shape[0]):
                try:
                    rejection_counts(sorted_p[row], spec, factors, m0=cfg.m0)
                except Exception:
                    raise SimulationError(f"{spec.label} failed at replication {start + row}: {exc}", start + row) from exc
            raise
        out.append((r.astype(np.int64), _false_rejections(cum_null, r)))
    return out


def _chunks(reps, chunk_size):
    return [(a, min(a + chunk_size, reps)) for a in range(0, reps, chunk_size)]


def _map_chunks(fn, args_list, workers):
    if workers > 1 and len(args_list) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, *zip(*args_list)))
    return [fn(*a) for a in args_list]


def summarize(r, v, m0: int, m: int, q: float, bins: int = HIST_BINS) -> SimMetrics:
    """Aggregate per-replication rejection counts into :class:`SimMetrics`."""
    r = np.asarray(r, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    n = r.size
    vr = v / np.maximum(r, 1)
    s = r - v
    m1 = m - m0

    def mean_se(x):
        sd = float(np.std(x, ddof=1)) if n > 1 else 0.0
        return float(np.mean(x)), sd / math.sqrt(n)

    fdr, fdr_se = mean_se(vr)
    if m1 > 0:
        power, power_se = mean_se(s / m1)
    else:
        power, power_se = math.nan, math.nan
    mean_r, mean_r_se = mean_se(r)
    n_bound = int(np.count_nonzero(vr <= q))
    hist = np.bincount(np.minimum((vr * bins).astype(np.int64), bins - 1), minlength=bins)
    return SimMetrics(
        reps=n,
        fdr_hat=fdr,
        fdr_se=fdr_se,
        power_hat=power,
        power_se=power_se,
        vr_std=float(np.std(vr, ddof=1)) if n > 1 else 0.0,
        p_bound=n_bound / n,
        n_bound=n_bound,
        mean_r=mean_r,
        mean_r_se=mean_r_se,
        vr_hist=hist,
    )


def _resolve_specs(cfg, specs):
    resolved = []
    for spec in specs:
        if spec.kind is ProcedureKind.ORC and spec.m0 is None:
            spec = replace(spec, m0=cfg.m0)
        resolved.append(spec)
    return resolved


def _factors_for(cfg, specs, table):
    if not any(s.kind is ProcedureKind.IBHSUM for s in specs):
        return None
    table = table if table is not None else CorrectionTable(compute_missing=True)
    return table.get(cfg.m) if hasattr(table, "get") else table


def simulate_counts(cfg: SimConfig, specs, table=None, workers: int = 1, chunk_size: int = 1000):
    """Per-replication ``(r, v)`` arrays for each spec, in replication order."""
    specs = list(specs)
    resolved = _resolve_specs(cfg, specs)
    factors = _factors_for(cfg, resolved, table)
    jobs = [(cfg, resolved, factors, a, b) for a, b in _chunks(cfg.reps, chunk_size)]
    parts = _map_chunks(_simulate_chunk, jobs, workers)
    result = {}
    for k, spec in enumerate(specs):
        r = np.concatenate([part[k][0] for part in parts])
        v = np.concatenate([part[k][1] for part in parts])
        result[spec] = (r, v)
    return result


def run_simulation(cfg: SimConfig, specs, table=None, workers: int = 1, chunk_size: int = 1000, bins: int = HIST_BINS):
    """Simulate ``cfg.reps`` instances and evaluate every spec on each.

    Oracle specs without an explicit m0 use ``cfg.m0``. When IBHsum is
    requested and no table is passed, its correction factors are computed
    on the spot. Returns a dict mapping each spec to its :class:`SimMetrics`.
    """
    counts = simulate_counts(cfg, specs, table, workers, chunk_size)
    return {spec: summarize(r, v, cfg.m0, cfg.m, cfg.q, bins) for spec, (r, v) in counts.items()}


@dataclass(frozen=True)
class SweepRow:
    mu1: float
    m0_frac: float
    procedure: str
    mode: str
    metric: str
    value: float
    se: float


def sweep(mu1_grid, m0_frac_grid, template: SimConfig, specs, metrics=("fdr",), table=None, workers: int = 1, chunk_size: int = 1000):
    """Run the simulation over a (mu1, m0/m) grid and flatten the requested metrics."""
    mu1_grid = [float(x) for x in mu1_grid]
    m0_frac_grid = [float(x) for x in m0_frac_grid]
    if not mu1_grid or not m0_frac_grid:
        raise ValidationError("sweep grid must be non-empty")
    for name in metrics:
        if name not in METRICS:
            raise ValidationError(f"unknown metric {name!r}; expected one of {METRICS}")
    if table is None and any(s.kind is ProcedureKind.IBHSUM for s in specs):
        table = CorrectionTable(compute_missing=True)
    rows = []
    for mu1 in mu1_grid:
        for frac in m0_frac_grid:
            if not 0.0 <= frac <= 1.0:
                raise ValidationError(f"m0 fraction must lie in [0, 1], got {frac}")
            cfg = replace(template, mu1=mu1, m0=int(round(frac * template.m)))
            result = run_simulation(cfg, specs, table, workers, chunk_size)
            for spec, met in result.items():
                for name in metrics:
                    value, se = met.metric(name)
                    rows.append(SweepRow(mu1, frac, spec.kind.value, spec.mode.value, name, value, se))
    return rows


@dataclass(frozen=True)
class BoundCheck:
    empirical_fdr: float
    fdr_se: float
    bound: float
    bound_se: float

    @property
    def combined_se(self) -> float:
        return math.hypot(self.fdr_se, self.bound_se)


_BOUND_ESTIMATORS = (
    EstimatorKind.SUM_RAW,
    EstimatorKind.SUM_CORRECTED,
    EstimatorKind.LOG_RAW,
    EstimatorKind.LOG_CORRECTED,
    EstimatorKind.STS,
)


def _bound_chunk(cfg, kind, lam, factors, start, stop):
    sorted_p, order = _sorted_batch(cfg, start, stop)
    m = cfg.m
    m0_hat = np.asarray(est.estimate_m0(sorted_p, kind, lam=lam, table=factors), dtype=float)
    i = np.arange(1, m + 1, dtype=float)
    with np.errstate(divide="ignore"):
        thr = (cfg.q * i)[None, :] / m0_hat[:, None]
    r = step_up_count(sorted_p, thr)
    v = _false_rejections(np.cumsum(order < cfg.m0, axis=1), r)
    # leave out hypothesis 0, which is null because m0 >= 1
    rest = sorted_p[order != 0].reshape(sorted_p.shape[0], m - 1)
    with np.errstate(divide="ignore"):
        inv = 1.0 / np.asarray(est.estimate_m0(rest, kind, lam=lam, table=factors, drop_one=True), dtype=float)
    return v / np.maximum(r, 1), inv


def fdr_bound_check(cfg: SimConfig, estimator, lam: float = 0.5, table=None, workers: int = 1, chunk_size: int = 1000) -> BoundCheck:
    """Empirical FDR of the adaptive step-up procedure against its bound.

    The bound is ``m0 * q * E[1 / m0_hat^(1)]`` where ``m0_hat^(1)`` is the
    estimator evaluated with one null p-value removed. For the corrected
    sum estimator the factors of the full m are kept for the reduced
    vector.
    """
    kind = EstimatorKind.parse(estimator)
    if kind not in _BOUND_ESTIMATORS:
        raise ValidationError(f"bound check needs a scalar monotone estimator, got {kind.value}")
    if cfg.m0 < 1 or cfg.m < 2:
        raise ValidationError("bound check needs m0 >= 1 and m >= 2")
    factors = None
    if kind is EstimatorKind.SUM_CORRECTED:
        table = table if table is not None else CorrectionTable(compute_missing=True)
        factors = table.get(cfg.m) if hasattr(table, "get") else table
    jobs = [(cfg, kind, lam, factors, a, b) for a, b in _chunks(cfg.reps, chunk_size)]
    parts = _map_chunks(_bound_chunk, jobs, workers)
    vr = np.concatenate([a for a, _ in parts])
    inv = np.concatenate([b for _, b in parts])
    n = vr.size
    scale = cfg.m0 * cfg.q
    return BoundCheck(
        empirical_fdr=float(vr.mean()),
        fdr_se=float(vr.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        bound=float(scale * inv.mean()),
        bound_se=float(scale * inv.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
    )


def inverse_estimate_mc(m: int, m0: int, estimator, table=None, draws: int = 100_000, seed: int = 0, chunk_size: int = 10_000):
    """Monte Carlo ``E[1 / m0_hat^(1)]`` in the least favourable configuration.

    The leave-one-out vector holds m0-1 uniform null p-values and m-m0
    alternative p-values pinned at zero, the case the correction factors
    are designed against. Returns ``(mean, standard error)``.
    """
    kind = EstimatorKind.parse(estimator)
    if kind not in _BOUND_ESTIMATORS:
        raise ValidationError(f"need a scalar estimator, got {kind.value}")
    if not 1 <= m0 <= m or m < 2:
        raise ValidationError(f"need 1 <= m0 <= m and m >= 2, got m0={m0}, m={m}")
    if kind is EstimatorKind.SUM_CORRECTED and table is None:
        table = CorrectionTable(compute_missing=True)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    total = total_sq = 0.0
    done = 0
    while done < draws:
        n = min(chunk_size, draws - done)
        p = np.zeros((n, m - 1))
        p[:, : m0 - 1] = rng.random((n, m0 - 1))
        inv = 1.0 / np.asarray(est.estimate_m0(p, kind, table=table, drop_one=True), dtype=float)
        total += inv.sum()
        total_sq += (inv * inv).sum()
        done += n
    mean = total / draws
    var = max(total_sq / draws - mean * mean, 0.0) * draws / max(draws - 1, 1)
    return mean, math.sqrt(var / draws)


def chi_square_identity(m0: int, samples: int = 1_000_000, seed: int = 0, chunk_size: int = 100_000):
    """Monte Carlo mean of ``2/X`` for ``X = -2 * sum_{i=0..m0} log U_i``.

    X is chi-square with 2*m0 + 2 degrees of freedom, so the mean is 1/m0.
    Returns ``(mean, standard error)``.
    """
    if int(m0) < 1:
        raise ValidationError(f"m0 must be >= 1, got {m0}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    vals = []
    for a in range(0, samples, chunk_size):
        n = min(chunk_size, samples - a)
        u = 1.0 - rng.random((n, int(m0) + 1))  # in (0, 1]
        x = -2.0 * np.log(u).sum(axis=1)
        vals.append(2.0 / x)
    y = np.concatenate(vals)
    return float(y.mean()), float(y.std(ddof=1) / math.sqrt(y.size))


@dataclass(frozen=True)
class CounterexampleResult:
    epsilon: float
    reps: int
    fdr1: float
    fdr1_se: float
    fdr2: float
    fdr2_se: float

    @property
    def fdr1_exact(self) -> float:
        e = self.epsilon
        return e * (e * e / 3.0 + e * (1.0 - e) + (1.0 - e) ** 2)

    @property
    def fdr2_exact(self) -> float:
        e = self.epsilon
        return (e - e**3 / 3.0) / 2.0


def counterexample_scenario(epsilon: float, reps: int = 1_000_000, seed: int = 0, chunk_size: int = 200_000) -> CounterexampleResult:
    """Three hypotheses, one null, where the more conservative rule has higher FDR.

    Hypothesis 0 is null with p ~ U[0,1]. Hypotheses 1 and 2 are
    alternatives whose p-value is uniform on [0, eps] with probability eps
    and equal to eps otherwise. Rule 1 rejects the smallest p-value, rule 2
    the two smallest; ties go to the lower index.
    """
    epsilon = float(epsilon)
    if not 0.0 < epsilon < 1.0:
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon}")
    if int(reps) < 2:
        raise ValidationError("reps must be >= 2")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    v1, v2 = [], []
    for a in range(0, reps, chunk_size):
        n = min(chunk_size, reps - a)
        p = np.empty((n, 3))
        p[:, 0] = rng.random(n)
        spread = rng.random((n, 2)) < epsilon
        p[:, 1:] = np.where(spread, epsilon * rng.random((n, 2)), epsilon)
        order = np.argsort(p, axis=1, kind="stable")
        v1.append((order[:, 0] == 0).astype(float))
        v2.append(((order[:, 0] == 0) | (order[:, 1] == 0)) / 2.0)
    x1, x2 = np.concatenate(v1), np.concatenate(v2)
    root = math.sqrt(reps)
    return CounterexampleResult(
        epsilon=epsilon,
        reps=int(reps),
        fdr1=float(x1.mean()),
        fdr1_se=float(x1.std(ddof=1) / root),
        fdr2=float(x2.mean()),
        fdr2_se=float(x2.std(ddof=1) / root),
    )
