"""Command-line interface.

Exit status is 0 on success, 2 for invalid input or arguments and 1 for
any other failure.
"""
from __future__ import annotations

import argparse
import glob
import sys
from pathlib import Path

from . import fileio
from .correction import CorrectionTable
from .errors import FDRError, ValidationError, VersionMismatchError
from .estimators import EstimatorKind
from .procedures import ProcedureKind, ProcedureSpec, adaptive_qvalues, apply_procedure, bh_qvalues, compare_datasets
from .simulate import METRICS, SimConfig, counterexample_scenario, run_simulation, sweep

ALL_PROCEDURES = "orc,bh95,bky,sts,ibhsum,ibhlog"


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma separated list of numbers, got {text!r}") from None


def _ints(text):
    out = []
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                a, b = part.split("-")
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers like '500,1000' or '2-50', got {text!r}") from None
    return out


def _names(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _table(args):
    compute = not getattr(args, "strict_table", False)
    if getattr(args, "correction_table", None):
        return CorrectionTable.load(args.correction_table, compute_missing=compute)
    return CorrectionTable(compute_missing=compute)


def _specs(names, args, **fields):
    specs = []
    for name in names:
        kind_text, _, mode = name.partition(":")
        kind = ProcedureKind.parse(kind_text)
        if not mode and kind in (ProcedureKind.IBHSUM, ProcedureKind.IBHLOG):
            mode = getattr(args, "ibh_mode", None) or None
        specs.append(ProcedureSpec(kind, mode or None, lam=args.lam, **fields))
    return specs


def cmd_apply(args):
    p = fileio.read_pvalues(args.input, column=args.column)
    spec = ProcedureSpec(args.procedure, args.mode, q=args.q, lam=args.lam, m0=args.m0)
    table = _table(args) if spec.kind is ProcedureKind.IBHSUM else None
    outcome = apply_procedure(p, spec, table)
    fileio.write_rejections(outcome, args.out, q=spec.q, procedure=spec.label)


def cmd_qvalue(args):
    p = fileio.read_pvalues(args.input, column=args.column)
    if args.estimator == "bh":
        qv = bh_qvalues(p)
    else:
        kind = EstimatorKind.parse(args.estimator)
        table = _table(args) if kind is EstimatorKind.SUM_CORRECTED else None
        qv = adaptive_qvalues(p, kind, lam=args.lam, table=table)
    fileio.write_qvalues(qv, p, args.out)


def _config(args, m0=None):
    if m0 is None:
        if args.m0 is None and args.m0_frac is None:
            raise ValidationError("give --m0 or --m0-frac")
        m0 = args.m0 if args.m0 is not None else int(round(args.m0_frac * args.m))
    return SimConfig(m=args.m, m0=m0, mu1=args.mu1, rho=args.rho, q=args.q, reps=args.reps, seed=args.seed)


def cmd_simulate(args):
    cfg = _config(args)
    specs = _specs(_names(args.procedures), args, q=cfg.q)
    table = _table(args) if any(s.kind is ProcedureKind.IBHSUM for s in specs) else None
    results = run_simulation(cfg, specs, table, workers=args.workers, chunk_size=args.chunk_size)
    fileio.write_metrics(results, args.out, cfg=cfg)
    if args.hist_out:
        fileio.write_vr_histogram(results, args.hist_out)


def cmd_sweep(args):
    template = SimConfig(m=args.m, m0=args.m, mu1=0.0, rho=args.rho, q=args.q, reps=args.reps, seed=args.seed)
    specs = _specs(_names(args.procedures), args, q=template.q)
    table = _table(args) if any(s.kind is ProcedureKind.IBHSUM for s in specs) else None
    rows = sweep(args.mu1_grid, args.m0frac_grid, template, specs, metrics=_names(args.metrics), table=table, workers=args.workers, chunk_size=args.chunk_size)
    fileio.write_sweep(rows, args.out)


def cmd_correction(args):
    ms = args.m_list
    if not ms:
        raise ValidationError("--m-list is empty")
    table = CorrectionTable.build(ms, workers=args.workers)
    if args.out_table:
        table.save(args.out_table)
    sys.stdout.write(table.dumps())


def cmd_compare(args):
    paths = []
    for pattern in args.inputs:
        hits = sorted(glob.glob(pattern))
        paths.extend(hits if hits else [pattern])
    datasets = {}
    failures = {}
    for path in paths:
        try:
            datasets[Path(path).stem] = fileio.read_pvalues(path, column=args.column)
        except (OSError, FDRError) as exc:
            failures[Path(path).stem] = exc
    for name, exc in failures.items():
        print(f"warning: skipping {name}: {exc}", file=sys.stderr)
    if not datasets:
        raise ValidationError("no readable input datasets")
    specs = _specs(_names(args.procedures), args)
    table = _table(args) if any(s.kind is ProcedureKind.IBHSUM for s in specs) else None
    report = compare_datasets(datasets, specs, args.q_list, table, workers=args.workers)
    fileio.write_compare(report, args.out)
    fileio.write_compare_summary(report, args.summary_out if args.summary_out else sys.stderr)


def cmd_counterexample(args):
    res = counterexample_scenario(args.epsilon, reps=args.reps, seed=args.seed)
    with fileio._destination(args.out) as fh:
        fh.write(f"# epsilon={res.epsilon}\n# reps={res.reps}\n# seed={args.seed}\n")
        fh.write("quantity,value,se,exact\n")
        fh.write(f"fdr1,{res.fdr1:.7g},{res.fdr1_se:.3g},{res.fdr1_exact:.7g}\n")
        fh.write(f"fdr2,{res.fdr2:.7g},{res.fdr2_se:.3g},{res.fdr2_exact:.7g}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ibhfdr", description="Adaptive Benjamini-Hochberg FDR procedures and simulations.")
    sub = parser.add_subparsers(dest="command", required=True)

    def table_flags(p):
        p.add_argument("--correction-table", help="correction table file for ibhsum (missing m are computed)")
        p.add_argument("--strict-table", action="store_true", help="fail instead of computing factors missing from the table")

    def input_flags(p):
        p.add_argument("--input", required=True, help="p-value file (plain or CSV)")
        p.add_argument("--column", help="CSV column name or 0-based index")
        p.add_argument("--out", default="-", help="output file (default stdout)")

    p = sub.add_parser("apply", help="apply one procedure to a p-value file")
    input_flags(p)
    p.add_argument("--procedure", required=True, choices=[k.value for k in ProcedureKind])
    p.add_argument("--mode", choices=["up", "down"], help="default: down for ibh*, up for bh95/orc; bky and sts are fixed")
    p.add_argument("--q", type=float, default=0.05)
    p.add_argument("--m0", type=int, help="true null count, for orc")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5, help="STS lambda")
    table_flags(p)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("qvalue", help="BH or adaptive q-values")
    input_flags(p)
    p.add_argument("--estimator", default="bh", choices=["bh"] + [k.value for k in EstimatorKind if k.is_scalar and k is not EstimatorKind.ORACLE])
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    table_flags(p)
    p.set_defaults(func=cmd_qvalue)

    def sim_flags(p, grid=False):
        p.add_argument("--m", type=int, default=500)
        if not grid:
            p.add_argument("--m0", type=int)
            p.add_argument("--m0-frac", type=float)
            p.add_argument("--mu1", type=float, default=3.5)
        p.add_argument("--rho", type=float, default=0.0)
        p.add_argument("--q", type=float, default=0.05)
        p.add_argument("--reps", type=int, default=50000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--procedures", default=ALL_PROCEDURES, help="comma list, optional ':up'/':down' suffix")
        p.add_argument("--ibh-mode", choices=["up", "down"], default="down", help="mode for ibh* without a suffix")
        p.add_argument("--lambda", dest="lam", type=float, default=0.5)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--chunk-size", type=int, default=1000)
        p.add_argument("--out", default="-")
        table_flags(p)

    p = sub.add_parser("simulate", help="Monte Carlo FDR / power for one configuration")
    sim_flags(p)
    p.add_argument("--hist-out", help="also write the V/R+ histogram here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="simulate over a (mu1, m0/m) grid")
    sim_flags(p, grid=True)
    p.add_argument("--mu1-grid", type=_floats, required=True)
    p.add_argument("--m0frac-grid", type=_floats, required=True)
    p.add_argument("--metrics", default="fdr", help=f"comma list from {','.join(METRICS)}")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("correction", help="compute correction factors C(m), s(m)")
    p.add_argument("--m-list", type=_ints, required=True, help="e.g. 500,1000 or 2-100")
    p.add_argument("--out-table")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_correction)

    p = sub.add_parser("compare", help="rejection ratios against BH95 over many datasets")
    p.add_argument("--inputs", nargs="+", required=True, help="files or glob patterns")
    p.add_argument("--column")
    p.add_argument("--q-list", type=_floats, default=[0.05, 0.1])
    p.add_argument("--procedures", default="bky,sts,ibhsum,ibhlog")
    p.add_argument("--ibh-mode", choices=["up", "down"], default="down")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="-")
    p.add_argument("--summary-out", help="aggregate table (default stderr)")
    table_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("counterexample", help="FDR non-monotonicity example with three hypotheses")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--reps", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_counterexample)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ValidationError, VersionMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
