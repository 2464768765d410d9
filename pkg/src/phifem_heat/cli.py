"""Command-line entry point for single runs, convergence ladders and
parameter sweeps.

Diagnostics go to standard error; results are appended to a CSV whose
schema is fixed by the analysis module.  Defaults reproduce the headline
configuration: circle case, k=1, l=2, sigma=1, dt=h.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys

from .analysis import build_report, self_convergence, write_records_csv
from .cases import circle_case, popcorn_case, load_case
from .driver import run_single, parse_dt_rule
from .levelset import interpolate_levelset, classify
from .mesh import BoxDomain, build_background_mesh

log = logging.getLogger("phifem_heat")

_CASES = {"circle": circle_case, "popcorn": popcorn_case}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--case", default="circle", help="built-in case name (circle, popcorn)")
    p.add_argument("--config", default=None, help="TOML file defining a custom case")
    p.add_argument("--k", type=int, default=1, help="element degree of the unknown")
    p.add_argument("--l", type=int, default=None, help="level-set interpolation degree (default k+1)")
    p.add_argument("--sigma", type=float, default=1.0, help="stabilization weight")
    p.add_argument("--dt-rule", default="1", help="dt = h^(p/m); rational exponent like 1, 2 or 3/2")
    p.add_argument("--T", type=float, default=None, help="final time (default from the case)")
    p.add_argument("--box", type=float, nargs=2, metavar=("LO", "HI"), default=None,
                   help="override the cubic box corners")
    p.add_argument("--n", type=int, default=None, help="subdivisions per axis")
    p.add_argument("--output", default="results.csv", help="CSV output path")


def _resolve_case(args):
    if args.config:
        return load_case(args.config)
    if args.case not in _CASES:
        raise SystemExit(f"unknown case {args.case!r}; available: {', '.join(_CASES)}")
    return _CASES[args.case]()


def _resolve_box(args, case):
    if args.box is None:
        return None
    lo, hi = args.box
    return BoxDomain((lo,) * case.dim, (hi,) * case.dim)


def _validate(args, parser):
    problems = []
    if args.k not in (1, 2):
        problems.append(f"--k must be 1 or 2, got {args.k}")
    if args.l is not None and args.l < args.k:
        problems.append(f"--l must be >= k, got l={args.l} k={args.k}")
    if args.sigma <= 0:
        problems.append(f"--sigma must be positive, got {args.sigma}")
    try:
        parse_dt_rule(args.dt_rule)
    except ValueError as exc:
        problems.append(str(exc))
    ladder = getattr(args, "ladder", None)
    if ladder is not None:
        ns = _parse_int_list(ladder)
        if sorted(ns) != ns or len(set(ns)) != len(ns):
            problems.append(f"--ladder must be strictly increasing, got {ladder}")
        if any(n < 1 for n in ns):
            problems.append("--ladder entries must be >= 1")
    if problems:
        parser.error("; ".join(problems))


def _parse_int_list(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _parse_float_list(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _maybe_render(csv_path, out_dir):
    try:
        from plotrender import PlotSpec, render
    except ImportError:
        log.warning("plotrender is not installed; skipping figure output")
        return
    os.makedirs(out_dir, exist_ok=True)
    for column, stem in (("err_l2h1", "l2h1"), ("err_linfl2", "linfl2")):
        spec = PlotSpec(
            csv_paths=[csv_path],
            x_column="h",
            y_column=column,
            output=os.path.join(out_dir, f"convergence_{stem}.png"),
        )
        render(spec)
        log.info("wrote %s", spec.output)


def _report(records):
    rep = build_report(records) if len(records) >= 2 else None
    for r in records:
        print(
            f"n={r.n:5d} h={r.h:.6g} dt={r.dt:.6g} ndofs={r.ndofs} "
            f"err_l2h1={r.err_l2h1:.6g} err_linfl2={r.err_linfl2:.6g}"
        )
    if rep:
        for norm, label in (("err_l2h1", "l2(H1)"), ("err_linfl2", "linf(L2)")):
            if norm in rep.orders:
                print(
                    f"fitted {label} order: {rep.orders[norm]:.3f} "
                    f"(excluding coarsest: {rep.orders_excl_coarsest[norm]:.3f})"
                )


def cmd_run(args, parser):
    _validate(args, parser)
    case = _resolve_case(args)
    box = _resolve_box(args, case)

    if args.sweep_sigma:
        return _sweep_sigma(args, case, box)

    ns = _parse_int_list(args.ladder) if args.ladder else [args.n if args.n else 8]
    records = []
    if len(ns) > 1 and case.exact is None:
        ref_n = args.self_ref if args.self_ref else 2 * ns[-1]
        report = self_convergence(
            case, ns, ref_n, k=args.k, l=args.l if args.l else args.k + 1,
            sigma=args.sigma, dt_rule=args.dt_rule, final_time=args.T, box=box,
            solver=args.solver,
        )
        records = report.records
    else:
        for n in ns:
            result = run_single(
                case, n, k=args.k, l=args.l, sigma=args.sigma, dt_rule=args.dt_rule,
                final_time=args.T, box=box, solver=args.solver,
            )
            records.append(result.record)
    write_records_csv(args.output, records)
    _report(records)
    if args.figures:
        _maybe_render(args.output, args.figures)
    return 0


def _sweep_sigma(args, case, box):
    sigmas = _parse_float_list(args.sweep_sigma)
    n = args.n if args.n else 8
    records = []
    for sigma in sigmas:
        result = run_single(
            case, n, k=args.k, l=args.l, sigma=sigma, dt_rule=args.dt_rule,
            final_time=args.T, box=box, solver=args.solver,
        )
        records.append(result.record)
    write_records_csv(args.output, records)
    for r in records:
        print(f"sigma={r.sigma:g} err_l2h1={r.err_l2h1:.6g} err_linfl2={r.err_linfl2:.6g}")
    return 0


def cmd_sweep(args, parser):
    _validate(args, parser)
    case = _resolve_case(args)
    box = _resolve_box(args, case)
    if args.sweep_sigma:
        return _sweep_sigma(args, case, box)
    if args.sweep_l:
        degrees = _parse_int_list(args.sweep_l)
        n = args.n if args.n else 8
        records = []
        for l in degrees:
            result = run_single(
                case, n, k=args.k, l=l, sigma=args.sigma, dt_rule=args.dt_rule,
                final_time=args.T, box=box, solver=args.solver,
            )
            records.append(result.record)
        write_records_csv(args.output, records)
        for r in records:
            print(f"l={r.l} err_l2h1={r.err_l2h1:.6g} err_linfl2={r.err_linfl2:.6g}")
        return 0
    parser.error("sweep requires --sweep-sigma or --sweep-l")


def cmd_info(args, parser):
    _validate(args, parser)
    case = _resolve_case(args)
    box = _resolve_box(args, case) or case.box
    n = args.n if args.n else 8
    mesh = build_background_mesh(box, n)
    l = args.l if args.l else args.k + 1
    phi_h = interpolate_levelset(case.levelset, mesh, l)
    cls = classify(phi_h, mesh)
    print(f"case              {case.name}")
    print(f"mesh              {mesh.n_cells} cells, {mesh.n_vertices} vertices, h={mesh.h:.6g}")
    print(cls.summary())
    return 0


def main(argv=None) -> int:
    if "PHIFEM_HEAT_THREADS" in os.environ:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, os.environ["PHIFEM_HEAT_THREADS"])
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")

    parser = argparse.ArgumentParser(
        prog="phifem-heat",
        description="Heat equation solver on level-set domains with an unfitted background mesh",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single run or convergence ladder")
    _add_common(p_run)
    p_run.add_argument("--ladder", default=None, help="comma-separated subdivision counts")
    p_run.add_argument("--sweep-sigma", default=None, help="comma-separated sigma values at fixed n")
    p_run.add_argument("--self-ref", type=int, default=None,
                       help="reference n for self-convergence (cases without exact solution)")
    p_run.add_argument("--solver", choices=("direct", "iterative"), default="direct")
    p_run.add_argument("--figures", default=None, help="directory for rendered convergence figures")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sigma or level-set-degree sweep")
    _add_common(p_sweep)
    p_sweep.add_argument("--sweep-sigma", default=None)
    p_sweep.add_argument("--sweep-l", default=None)
    p_sweep.add_argument("--solver", choices=("direct", "iterative"), default="direct")
    p_sweep.set_defaults(func=cmd_sweep)

    p_info = sub.add_parser("info", help="mesh and classification diagnostics only")
    _add_common(p_info)
    p_info.set_defaults(func=cmd_info)

    args = parser.parse_args(argv)
    sub_parser = {"run": p_run, "sweep": p_sweep, "info": p_info}[args.command]
    try:
        return args.func(args, sub_parser) or 0
    except Exception as exc:  # structured nonzero exit for module errors
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
