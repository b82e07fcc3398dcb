"""Correction factors C(m), s(m) for the corrected sum estimator.

The corrected estimator ``C * min(m, max(s, 2*sum(p)))`` controls the FDR
when ``E[1/m0_hat^(1)] <= 1/m0`` for every possible m0. Ignoring the
alternative p-values, the leave-one-out sum ``z = 2*sum_{j=2..m0} p_j``
determines that expectation, and the smallest admissible C for given
(m, m0, s) is

    m0 * [ P(z < s)/s + int_s^m h(t)/t dt + P(z > m)/m ]

where h is the density of z, approximated here by the normal law with mean
m0-1 and variance (m0-1)/3. C(m, s) is the maximum of that over m0. As s
grows, the maximum contributed by small m0 ("left" maximum, near m0 ~ s)
falls until it drops below the value at m0 = m, which does not depend on
s. s(m) is the first integer s where that happens and C(m) is the maximum
there.
"""
from __future__ import annotations

import math
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_CEILING, Decimal
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import special

from .errors import MissingCorrectionError, ValidationError, VersionMismatchError

TABLE_HEADER = "fdr-correction-table v1"
BUILD_VERSION = "1"

# Simpson panels across the +-WINDOW_SD window; 512 panels over 24 sd is
# ~21 points per standard deviation.
SIMPSON_PANELS = 512
WINDOW_SD = 12.0
# m0 is scanned exhaustively up to this m, with a stride above it
FULL_SCAN_MAX_M = 2000


@dataclass(frozen=True)
class CorrectionFactors:
    m: int
    c: float
    s: float
    meta: dict = field(default_factory=dict, compare=False, hash=False, repr=False)


def uniform_sum_density(m0: int, t):
    """Normal approximation to the density of twice a sum of m0-1 uniforms.

    For m0 = 1 the sum is empty and the law is a point mass at zero; that
    is returned symbolically as 0 away from zero and +inf at zero.
    """
    m0 = int(m0)
    if m0 < 1:
        raise ValidationError(f"m0 must be >= 1, got {m0}")
    t = np.asarray(t, dtype=float)
    if m0 == 1:
        out = np.where(t == 0.0, np.inf, 0.0)
    else:
        mu = m0 - 1.0
        sd = math.sqrt(mu / 3.0)
        out = np.exp(-0.5 * ((t - mu) / sd) ** 2) / (sd * math.sqrt(2.0 * math.pi))
    return float(out) if out.ndim == 0 else out


def _simpson_weights(n):
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * n)


_WEIGHTS = _simpson_weights(SIMPSON_PANELS)
_UNIT = np.linspace(0.0, 1.0, SIMPSON_PANELS + 1)


def _integrals(m, m0s, s, chunk=1024):
    """C(m, m0, s) for an array of m0 values at a fixed s."""
    m0s = np.asarray(m0s, dtype=np.int64)
    out = np.empty(m0s.size)
    point_mass = m0s == 1
    out[point_mass] = 1.0 / s
    idx = np.flatnonzero(~point_mass)
    for start in range(0, idx.size, chunk):
        sel = idx[start : start + chunk]
        mu = m0s[sel] - 1.0
        sd = np.sqrt(mu / 3.0)
        lo = np.maximum(s, mu - WINDOW_SD * sd)
        hi = np.minimum(float(m), mu + WINDOW_SD * sd)
        width = np.maximum(hi - lo, 0.0)
        t = lo[:, None] + width[:, None] * _UNIT
        dens = np.exp(-0.5 * ((t - mu[:, None]) / sd[:, None]) ** 2) / (sd[:, None] * math.sqrt(2.0 * math.pi))
        middle = width * ((dens / t) @ _WEIGHTS)
        below = special.ndtr((s - mu) / sd) / s
        above = special.ndtr((mu - m) / sd) / m
        out[sel] = m0s[sel] * (below + middle + above)
    return out


def _check_args(m, m0, s):
    if not (1 <= m0 <= m):
        raise ValidationError(f"need 1 <= m0 <= m, got m0={m0}, m={m}")
    if not (0.0 < s < m):
        raise ValidationError(f"need 0 < s < m, got s={s}, m={m}")


def correction_integral(m: int, m0: int, s: float) -> float:
    """The smallest C that makes ``E[1/m0_hat^(1)] <= 1/m0`` at this (m, m0, s)."""
    m, m0, s = int(m), int(m0), float(s)
    _check_args(m, m0, s)
    return float(_integrals(m, [m0], s)[0])


def m0_grid(m: int) -> tuple[np.ndarray, int]:
    if m <= FULL_SCAN_MAX_M:
        return np.arange(1, m + 1), 1
    stride = math.ceil(m / FULL_SCAN_MAX_M)
    grid = np.arange(1, m + 1, stride)
    if grid[-1] != m:
        grid = np.append(grid, m)
    return grid, stride


def _left_max(m, s, grid, stride):
    """Maximum over m0 < m of C(m, m0, s), refined to integer m0."""
    inner = grid[grid < m]
    vals = _integrals(m, inner, s)
    k = int(np.argmax(vals))
    best_m0, best = int(inner[k]), float(vals[k])
    if stride > 1:
        local = np.arange(max(1, best_m0 - stride), min(m - 1, best_m0 + stride) + 1)
        lv = _integrals(m, local, s)
        j = int(np.argmax(lv))
        if lv[j] > best:
            best_m0, best = int(local[j]), float(lv[j])
    return best, best_m0


def max_over_m0(m: int, s: float) -> tuple[float, int]:
    """C(m, s) = max over m0 of C(m, m0, s), and the maximising m0."""
    m = int(m)
    grid, stride = m0_grid(m)
    right = float(_integrals(m, [m], s)[0])
    if m == 1:
        return right, 1
    left, at = _left_max(m, s, grid, stride)
    return (left, at) if left > right else (right, m)


@lru_cache(maxsize=None)
def optimal_correction(m: int) -> CorrectionFactors:
    """Search the integer s at which the m0 = m maximum starts to dominate.

    The predicate "left maximum <= value at m0 = m" is monotone in s, so the
    first integer satisfying it is found by bisection over 1..m-1.
    """
    m = int(m)
    if m < 2:
        raise ValidationError(f"correction factors need m >= 2, got {m}")
    grid, stride = m0_grid(m)

    def settled(s):
        right = float(_integrals(m, [m], s)[0])
        left, _ = _left_max(m, s, grid, stride)
        return left <= right

    lo, hi = 1, m - 1
    if not settled(hi):
        s = hi
    elif settled(lo):
        s = lo
    else:
        # invariant: settled(hi) and not settled(lo)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if settled(mid):
                hi = mid
            else:
                lo = mid
        s = hi
    c, at = max_over_m0(m, s)
    meta = {
        "simpson_panels": SIMPSON_PANELS,
        "window_sd": WINDOW_SD,
        "m0_stride": stride,
        "argmax_m0": at,
        "version": BUILD_VERSION,
    }
    return CorrectionFactors(m=m, c=c, s=float(s), meta=meta)


def _ceil_sig(x: float, digits: int = 8) -> str:
    d = Decimal(repr(float(x)))
    quantum = Decimal(1).scaleb(d.adjusted() - digits + 1)
    return format(d.quantize(quantum, rounding=ROUND_CEILING), "f")


def _format_s(s: float) -> str:
    return str(int(s)) if float(s).is_integer() else repr(float(s))


def _tabled(cf: CorrectionFactors) -> CorrectionFactors:
    """Round C up to 8 significant digits so the on-disk value is exact."""
    return CorrectionFactors(m=cf.m, c=float(_ceil_sig(cf.c)), s=cf.s, meta=dict(cf.meta))


class CorrectionTable:
    """Map from m to correction factors, optionally computing misses.

    Stored C values are rounded *up* to 8 significant digits, which is
    what the text format holds; saving and loading therefore round-trips
    exactly. Lookups are thread safe.
    """

    def __init__(self, entries=None, compute_missing: bool = False):
        self._entries = {}
        self._lock = threading.Lock()
        self.compute_missing = compute_missing
        for cf in entries or ():
            self._entries[int(cf.m)] = cf

    @classmethod
    def build(cls, ms, workers: int = 1, compute_missing: bool = False):
        ms = sorted({int(m) for m in ms})
        bad = [m for m in ms if m < 2]
        if bad:
            raise ValidationError(f"correction factors need m >= 2, got {bad}")
        if workers > 1 and len(ms) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                factors = list(pool.map(optimal_correction, ms))
        else:
            factors = [optimal_correction(m) for m in ms]
        return cls([_tabled(cf) for cf in factors], compute_missing=compute_missing)

    def get(self, m: int) -> CorrectionFactors:
        m = int(m)
        with self._lock:
            cf = self._entries.get(m)
        if cf is not None:
            return cf
        if not self.compute_missing:
            raise MissingCorrectionError(m)
        cf = _tabled(optimal_correction(m))
        with self._lock:
            self._entries.setdefault(m, cf)
        return cf

    def __contains__(self, m):
        return int(m) in self._entries

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self.entries())

    def entries(self) -> list[CorrectionFactors]:
        with self._lock:
            return [self._entries[m] for m in sorted(self._entries)]

    def triples(self) -> list[tuple[int, float, float]]:
        return [(cf.m, cf.c, cf.s) for cf in self.entries()]

    def dumps(self) -> str:
        lines = [TABLE_HEADER]
        lines += [f"{cf.m},{_ceil_sig(cf.c)},{_format_s(cf.s)}" for cf in self.entries()]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8", newline="\n")

    @classmethod
    def loads(cls, text: str, compute_missing: bool = False, source: str = "<string>"):
        lines = text.splitlines()
        if not lines or lines[0].strip() != TABLE_HEADER:
            got = lines[0].strip() if lines else ""
            raise VersionMismatchError(f"{source}: expected header {TABLE_HEADER!r}, got {got!r}")
        entries = []
        for lineno, line in enumerate(lines[1:], start=2):
            line = line.strip()
            if not line:
                continue
            try:
                m_str, c_str, s_str = line.split(",")
                m = int(m_str)
                s = float(s_str)
                entries.append(CorrectionFactors(m=m, c=float(c_str), s=s, meta={"source": source}))
            except ValueError as exc:
                raise ValidationError(f"{source}:{lineno}: malformed table row {line!r}") from exc
        return cls(entries, compute_missing=compute_missing)

    @classmethod
    def load(cls, path, compute_missing: bool = False):
        text = Path(path).read_text(encoding="utf-8")
        return cls.loads(text, compute_missing=compute_missing, source=str(path))


def correction_table(ms, path=None, workers: int = 1) -> CorrectionTable:
    """Compute factors for every m in ``ms`` and optionally persist them."""
    table = CorrectionTable.build(ms, workers=workers)
    if path is not None:
        table.save(path)
    return table
