"""Command-line experiment runner.

Every subcommand writes its outputs plus ``config.json`` (the parsed
arguments) into ``--out``. Exit codes: 0 success, 2 bad configuration,
3 tolerance not reached (budget exhausted or nothing left to refine).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from .adaptivity import build
from .convergence import adaptive_convergence, baseline_convergence, matched_comparison
from .hmatrix import assemble_hmatrix, export_hmatrix
from .operators import OPERATORS, BlurOperator, make_operator, schur_preconditioner_study
from .verification import DEFAULT_CAP, audit, write_audit

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET = 0, 2, 3
CSV_VERSION = 1


class ConfigError(ValueError):
    pass


def _operator(args):
    if args.op == "blur" and getattr(args, "sigma", None) is not None:
        return BlurOperator(args.n, sigma=args.sigma)
    try:
        return make_operator(args.op, args.n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _outdir(path) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")
    return path


def _echo(args, out) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["csv_version"] = CSV_VERSION
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=1, sort_keys=True)


def _write_rows(path, rows, fields) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _build(args):
    op = _operator(args)
    max_points = args.max_points
    if not args.tol > 0 and max_points is None:
        raise ConfigError("--tol 0 needs --max-points")
    return op, build(op, args.tol, q=args.q, max_points=max_points, seed=args.seed)


def cmd_build(args) -> int:
    out = _outdir(args.out)
    _echo(args, out)
    op, (pcop, report, builder) = _build(args)
    timings = [dict(row) for row in report.rows]
    if not args.timing:
        for row in report.rows:
            row["wall_ms"] = 0
    report.write_csv(os.path.join(out, "build_report.csv"))
    _write_rows(os.path.join(out, "timings.csv"), timings, report.FIELDS)
    builder.grid.dump(os.path.join(out, "grid.json"))
    summary = {"status": report.status, "budget_exhausted": report.budget_exhausted,
               "r": pcop.r, "eta_rel": report.final["eta_rel"]}
    if args.audit:
        if op.N > args.oracle_cap:
            raise ConfigError(f"N={op.N} is above the oracle cap {args.oracle_cap}")
        A = op.dense()
        summary["rel_error_exact"] = pcop.relative_error(A)
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1)
    print(json.dumps(summary))
    return EXIT_OK if report.status == "converged" else EXIT_BUDGET


def cmd_convergence(args) -> int:
    out = _outdir(args.out)
    _echo(args, out)
    op = _operator(args)
    if op.N > args.oracle_cap:
        raise ConfigError(f"N={op.N} is above the oracle cap {args.oracle_cap}")
    A = op.dense()
    rows = []
    base = []
    if args.baseline in ("regular-grid", "both"):
        ms = range(2, max(op.domain.shape) + 1, args.baseline_step)
        base = baseline_convergence(op, A, [m for m in ms if m >= 2])
        rows += [{"scheme": "regular-grid", **b, "eta_rel": ""} for b in base]
    if args.baseline in ("adaptive", "both"):
        targets = [b["r"] for b in base] if base and op.N > 1024 else None
        ad, _, _, _ = adaptive_convergence(op, A, tol=args.tol, q=args.q, seed=args.seed,
                                           max_points=args.max_points, targets=targets)
        rows += [{"scheme": "adaptive", **a} for a in ad]
        if base:
            cmp_rows = matched_comparison(ad, base)
            _write_rows(os.path.join(out, "comparison.csv"), cmp_rows,
                        ["r", "adaptive_r", "adaptive", "baseline", "ok"])
    _write_rows(os.path.join(out, "convergence.csv"), rows, ["scheme", "r", "rel_error", "eta_rel"])
    return EXIT_OK


def cmd_schur_study(args) -> int:
    out = _outdir(args.out)
    if args.op not in ("poisson-schur-2d", "poisson-schur-3d"):
        raise ConfigError("schur-study needs --op poisson-schur-2d or poisson-schur-3d")
    dim = 2 if args.op.endswith("2d") else 3
    for n in args.n:
        if n % 2:
            raise ConfigError(f"n={n} is odd; the interface must sit on the middle plane")
    _echo(args, out)
    rows = []
    for n in args.n:
        res = schur_preconditioner_study(dim, n, args.tol, q=args.q, seed=args.seed,
                                         max_points=args.max_points)
        rows.append(res)
        print(json.dumps(res), flush=True)
    _write_rows(os.path.join(out, "table.csv"), rows,
                ["n", "N", "cond_S", "cond_precond", "eig_ratio_precond", "r", "tsvd_rank",
                 "rel_error", "status", "St_indefinite"])
    return EXIT_OK


def cmd_hmatrix_export(args) -> int:
    out = _outdir(args.out)
    _echo(args, out)
    op, (pcop, report, _) = _build(args)
    before = (op.n_apply, op.n_apply_adjoint)
    t0 = time.perf_counter()
    H = assemble_hmatrix(pcop, tol=args.hm_tol, leaf_cap=args.leaf_cap, method=args.method,
                         rank=args.rank, seed=args.seed)
    elapsed = time.perf_counter() - t0
    export_hmatrix(H, os.path.join(out, "hmatrix.pchm"))
    rng = np.random.default_rng(args.seed)
    f = rng.standard_normal(op.domain.shape)
    g = pcop.apply(f)
    dev = float(np.linalg.norm(H.matvec(f) - g) / np.linalg.norm(g))
    summary = {"r": pcop.r, "n_blocks": len(H.blocks), "max_rank": max(H.ranks(), default=0),
               "flagged_blocks": H.flagged, "matvec_rel_dev": dev,
               "apply_A_during_assembly": op.n_apply - before[0],
               "apply_Astar_during_assembly": op.n_apply_adjoint - before[1],
               "assembly_s": round(elapsed, 3)}
    with open(os.path.join(out, "hmatrix.json"), "w") as fh:
        json.dump(summary, fh, indent=1)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_verify_theory(args) -> int:
    out = _outdir(args.out)
    _echo(args, out)
    op = _operator(args)
    if op.N > args.oracle_cap:
        raise ConfigError(f"N={op.N} is above the oracle cap {args.oracle_cap}")
    pcop, report, builder = build(op, args.tol, q=args.q, max_points=args.max_points,
                                  seed=args.seed)
    rep = audit(op.dense(), pcop, builder.grid)
    write_audit(rep, os.path.join(out, "audit.json"))
    print(json.dumps({k: rep[k] for k in ("err_fro", "bound_fro", "holds")}))
    return EXIT_OK if rep["holds"] else 1


def _common(p, n_multi=False):
    p.add_argument("--op", default="blur", help=f"one of {sorted(OPERATORS)}")
    if n_multi:
        p.add_argument("--n", type=int, nargs="+", default=[10, 20, 40])
    else:
        p.add_argument("--n", type=int, default=25)
    p.add_argument("--tol", type=float, default=0.05, help="relative tolerance")
    p.add_argument("--q", type=int, default=10, help="number of random probes")
    p.add_argument("--max-points", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("--oracle-cap", type=int, default=DEFAULT_CAP)
    p.add_argument("--sigma", type=float, default=None,
                   help="constant blur width (translation-invariant blur)")


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pcadapt", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="adaptive construction; writes build_report.csv and grid.json")
    _common(p)
    p.add_argument("--audit", action="store_true", help="also compute the exact error")
    p.add_argument("--timing", action="store_true", help="record wall time in build_report.csv")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("convergence", help="exact-error curves, adaptive vs regular grid")
    _common(p)
    p.set_defaults(tol=1e-10)
    p.add_argument("--baseline", choices=["adaptive", "regular-grid", "both"], default="both")
    p.add_argument("--baseline-step", type=int, default=1)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("schur-study", help="condition numbers of S and S~^-1 S")
    _common(p, n_multi=True)
    p.set_defaults(op="poisson-schur-3d")
    p.set_defaults(func=cmd_schur_study)

    p = sub.add_parser("hmatrix-export", help="convert to the block-compressed format")
    _common(p)
    p.add_argument("--method", choices=["randomized", "cur"], default="randomized")
    p.add_argument("--rank", type=int, default=None, help="fixed rank instead of tolerance")
    p.add_argument("--leaf-cap", type=int, default=32)
    p.add_argument("--hm-tol", type=float, default=1e-10, help="block compression tolerance")
    p.set_defaults(func=cmd_hmatrix_export)

    p = sub.add_parser("verify-theory", help="dense audit of the error identities and bounds")
    _common(p)
    p.set_defaults(n=12, max_points=40)
    p.set_defaults(func=cmd_verify_theory)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.q < 1:
            raise ConfigError("--q must be at least 1")
        if args.tol < 0:
            raise ConfigError("--tol must be non-negative")
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
