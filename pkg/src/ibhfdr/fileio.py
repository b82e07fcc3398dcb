"""Reading p-value files and writing CSV reports.

Reports are UTF-8 with LF line endings. Metadata goes in ``#``-prefixed
lines ahead of the CSV header. Hypothesis indices in reports are 1-based
and follow the order of the values in the input file.
"""
from __future__ import annotations

import contextlib
import csv
import io
import math
import sys
from pathlib import Path

import numpy as np

from .errors import EmptyFileError, OutOfRangeError, ParseError, ValidationError

PVALUE_COLUMNS = ("pval", "pvalue", "p_value", "p-value", "p")


def _fmt(x, digits=6) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, f".{digits}g")


def _check_value(text, lineno, source):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{source}:{lineno}: cannot parse {text!r} as a number", line=lineno) from None
    if not math.isfinite(value) or not 0.0 <= value <= 1.0:
        raise OutOfRangeError(f"{source}:{lineno}: p-value {text} outside [0, 1]", line=lineno, value=value)
    return value


def _read_plain(lines, source):
    values = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            values.append(_check_value(text, lineno, source))
    return values


def _pick_column(header, column, source):
    if column is not None:
        column = str(column)
        if column in header:
            return header.index(column)
        if column.isdigit() and int(column) < len(header):
            return int(column)
        raise ParseError(f"{source}: no column {column!r} in header {header}", line=1)
    lowered = [h.strip().lower() for h in header]
    for name in PVALUE_COLUMNS:
        if name in lowered:
            return lowered.index(name)
    if len(header) == 1:
        return 0
    raise ParseError(f"{source}: cannot tell which column holds p-values; pass a column name", line=1)


def _read_csv(text, column, source):
    reader = csv.reader(io.StringIO(text))
    header = None
    values = []
    for row in reader:
        if not row or row[0].lstrip().startswith("#"):
            continue
        if header is None:
            header = [h.strip() for h in row]
            idx = _pick_column(header, column, source)
            continue
        if idx >= len(row):
            raise ParseError(f"{source}:{reader.line_num}: row has no column {idx}", line=reader.line_num)
        values.append(_check_value(row[idx].strip(), reader.line_num, source))
    return values


def read_pvalues(path, column=None, fmt: str | None = None) -> np.ndarray:
    """Read a p-value vector from a plain or CSV file.

    Plain files hold one value per line; ``#`` starts a comment. CSV files
    need a header row; ``column`` picks a column by name or 0-based index,
    otherwise a column named like ``pval`` is used. The format is CSV when
    ``fmt="csv"``, when the suffix is ``.csv``, or when a column is given.
    """
    path = Path(path)
    source = str(path)
    text = path.read_text(encoding="utf-8")
    if fmt is None:
        fmt = "csv" if (path.suffix.lower() == ".csv" or column is not None) else "plain"
    if fmt == "csv":
        values = _read_csv(text, column, source)
    elif fmt == "plain":
        values = _read_plain(text.splitlines(), source)
    else:
        raise ValidationError(f"unknown p-value file format {fmt!r}")
    if not values:
        raise EmptyFileError(f"{source}: no p-values found")
    return np.asarray(values, dtype=float)


@contextlib.contextmanager
def _destination(dest):
    if dest is None or dest == "-":
        yield sys.stdout
    elif hasattr(dest, "write"):
        yield dest
    else:
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def _meta(fh, items):
    for key, value in items:
        fh.write(f"# {key}={value}\n")


def write_pvalues(values, dest) -> None:
    """One value per line at full precision, so reading back is exact."""
    with _destination(dest) as fh:
        for v in np.asarray(values, dtype=float):
            fh.write(f"{float(v)!r}\n")


def write_rejections(outcome, dest, q=None, procedure=None) -> None:
    with _destination(dest) as fh:
        _meta(
            fh,
            [
                ("procedure", procedure or outcome.label),
                ("mode", outcome.mode.value),
                ("q", _fmt(q) if q is not None else ""),
                ("m", outcome.m),
                ("m0_hat", _fmt(outcome.m0_hat)),
                ("r", outcome.r),
            ],
        )
        fh.write("index\n")
        for i in np.sort(outcome.rejected_indices):
            fh.write(f"{int(i) + 1}\n")


def write_qvalues(qv, pvalues, dest, digits: int = 6) -> None:
    p = np.asarray(pvalues, dtype=float)
    with _destination(dest) as fh:
        _meta(fh, [("estimator", qv.estimator.value if qv.estimator else "bh"), ("m", p.size), ("m0_hat", _fmt(qv.m0_hat))])
        fh.write("index,pvalue,qvalue\n")
        for i, (pv, qq) in enumerate(zip(p, qv.qvals), start=1):
            fh.write(f"{i},{_fmt(pv, digits)},{_fmt(qq, digits)}\n")


def write_metrics(results, dest, cfg=None, metrics=None, digits: int = 6, extra_meta=()) -> None:
    """One row per (procedure, metric) with value and standard error."""
    from .simulate import METRICS, NORMAL_SAMPLER

    metrics = metrics or METRICS
    with _destination(dest) as fh:
        meta = []
        if cfg is not None:
            meta += [(k, getattr(cfg, k)) for k in ("m", "m0", "mu1", "rho", "q", "reps", "seed")]
        meta += [("normal_sampler", NORMAL_SAMPLER), *extra_meta]
        _meta(fh, meta)
        fh.write("procedure,mode,metric,value,se\n")
        for spec, met in results.items():
            for name in metrics:
                value, se = met.metric(name)
                fh.write(f"{spec.kind.value},{spec.mode.value},{name},{_fmt(value, digits)},{_fmt(se, digits)}\n")


def write_vr_histogram(results, dest) -> None:
    """Per-bin counts of V/R+ for each procedure (bin lower edges)."""
    with _destination(dest) as fh:
        fh.write("procedure,mode,bin_lo,bin_hi,count\n")
        for spec, met in results.items():
            bins = met.vr_hist.size
            for k, count in enumerate(met.vr_hist):
                fh.write(f"{spec.kind.value},{spec.mode.value},{k / bins:.6g},{(k + 1) / bins:.6g},{int(count)}\n")


SWEEP_HEADER = "mu1,m0_frac,procedure,mode,metric,value,se"


def write_sweep(rows, dest, digits: int = 6) -> None:
    with _destination(dest) as fh:
        fh.write(SWEEP_HEADER + "\n")
        for row in rows:
            fh.write(
                f"{_fmt(row.mu1)},{_fmt(row.m0_frac)},{row.procedure},{row.mode},{row.metric},"
                f"{_fmt(row.value, digits)},{_fmt(row.se, digits)}\n"
            )


def write_compare(report, dest, digits: int = 6) -> None:
    with _destination(dest) as fh:
        fh.write("dataset,procedure,q,r,r_bh95,ratio,error\n")
        for row in report.rows:
            ratio = "undef" if row.ratio is None and row.error is None else _fmt(row.ratio, digits)
            r = "" if row.r is None else row.r
            r_bh = "" if row.r_bh95 is None else row.r_bh95
            err = (row.error or "").replace(",", ";").replace("\n", " ")
            fh.write(f"{row.dataset},{row.procedure},{_fmt(row.q)},{r},{r_bh},{ratio},{err}\n")


def write_compare_summary(report, dest, digits: int = 6) -> None:
    with _destination(dest) as fh:
        fh.write("procedure,q,mean,std,n,n_undefined,n_failed\n")
        for s in report.summary:
            fh.write(f"{s.procedure},{_fmt(s.q)},{_fmt(s.mean, digits)},{_fmt(s.std, digits)},{s.n},{s.n_undefined},{s.n_failed}\n")
