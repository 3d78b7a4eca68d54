"""Command-line entry point.

Exit codes: 0 on success, 2 on invalid input, 3 when a run diverges.
"""

import argparse
import logging
import sys

from ._validation import DivergenceError, ValidationError
from .functional import evaluate_spec, evaluate_trace
from .harness import (
    CONFIG_SCHEMA,
    emit_plot_script,
    fit_rate,
    fit_table,
    load_config,
    log_int_grid,
    read_table,
    sweep,
)
from .schedules import ScheduleSpec, materialize, optimal_schedule, parse_family
from .variational import VariationalSolution, solutions_to_csv, solve, wsd_minimize

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3


def _schedule_from_args(args):
    return ScheduleSpec(eta0=args.eta0, N=args.N, **parse_family(args.family))


def cmd_schedule(args):
    trace = materialize(_schedule_from_args(args))
    text = trace.to_csv(args.out)
    if args.out is None:
        sys.stdout.write(text)
    else:
        print(f"wrote {trace.N} steps to {args.out} (T={trace.T!r})")
    return EXIT_OK


def cmd_fsl_eval(args):
    spec = _schedule_from_args(args)
    if args.continuous:
        ev = evaluate_spec(spec, args.s, args.beta)
    else:
        ev = evaluate_trace(materialize(spec), args.s, args.beta)
    print("schedule_id,N,T,signal,noise,total")
    print(",".join(str(v) for v in ev.as_row(spec.label, spec.N)))
    return EXIT_OK


def cmd_optimal(args):
    spec, trace = optimal_schedule(args.s, args.beta, args.N, eta_stab=args.eta_stab)
    sol = solve(args.s, args.beta, args.N, eta_stab=args.eta_stab)
    print(f"family={spec.family} eta_peak={spec.eta0!r} gamma={spec.gamma!r} "
          f"r={spec.r!r} eps={spec.eps!r} T_trace={trace.T!r}")
    sys.stdout.write(solutions_to_csv([(args.N, sol)]))
    if args.out:
        trace.to_csv(args.out)
    return EXIT_OK


def cmd_wsd_fit(args):
    Ns = args.Ns if args.Ns else log_int_grid(args.N_min, args.N_max, args.N_points)
    rows = []
    for N in Ns:
        a, r, loss = wsd_minimize(args.s, args.beta, N)
        rows.append((N, VariationalSolution(float("nan"), None, loss, a_star=a, r_star=r)))
    text = solutions_to_csv(rows, args.out)
    sys.stdout.write(text)
    if len(rows) >= 2:
        fit = fit_rate([(N, sol.r_star) for N, sol in rows])
        print(f"# r_star slope {fit.slope!r} (r2={fit.r2:.6f}, n={fit.n_points})")
    return EXIT_OK


def _config_overrides(args):
    out = {}
    for section, keys in CONFIG_SCHEMA.items():
        for key in keys:
            out[key] = getattr(args, key, None)
    return out


def cmd_sweep(args):
    config = load_config(args.config, _config_overrides(args))
    rows = sweep(config, resume=not args.no_resume)
    if not rows:
        print("empty grid: nothing to run")
        return EXIT_OK
    for fam, fit in fit_table(rows).items():
        print(f"{fam}: slope {fit.slope:.4f} (r2={fit.r2:.4f}, n={fit.n_points})")
    print(f"wrote {len(rows)} rows to {config.output}")
    return EXIT_OK


def cmd_fit(args):
    rows = read_table(args.csv)
    fits = fit_table(rows, family=args.family, column=args.column, full=args.full)
    print("family,slope,intercept,r2,n_points")
    for fam, fit in fits.items():
        print(f"{fam},{fit.slope!r},{fit.intercept!r},{fit.r2!r},{fit.n_points}")
    return EXIT_OK


def cmd_plot(args):
    axes = (args.x, args.y)
    guides = [float(g) for g in args.guide]
    script = emit_plot_script(args.csv, axes=axes, guides=guides)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(script)
        print(f"wrote plot script to {args.out}")
    else:
        sys.stdout.write(script)
    return EXIT_OK


def _add_schedule_args(p):
    p.add_argument("--family", required=True, help="e.g. cosine, power:2, wsd:0.2:2:1")
    p.add_argument("--eta0", type=float, required=True)
    p.add_argument("--N", type=int, required=True)


def build_parser():
    parser = argparse.ArgumentParser(prog="fslsched", description="Learning-rate schedules under the FSL model.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="materialize a schedule and export (step, eta) CSV")
    _add_schedule_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("fsl-eval", help="evaluate the FSL functional for a schedule")
    _add_schedule_args(p)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--continuous", action="store_true", help="continuous quadrature instead of the step sum")
    p.set_defaults(func=cmd_fsl_eval)

    p = sub.add_parser("optimal", help="optimal schedule and variational solution")
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--eta_stab", type=float, default=1.0)
    p.add_argument("--out", help="write the trace CSV here")
    p.set_defaults(func=cmd_optimal)

    p = sub.add_parser("wsd-fit", help="minimize the stable-decay objective over a range of N")
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--Ns", type=float, nargs="*")
    p.add_argument("--N_min", type=float, default=1e4)
    p.add_argument("--N_max", type=float, default=1e8)
    p.add_argument("--N_points", type=int, default=9)
    p.add_argument("--out")
    p.set_defaults(func=cmd_wsd_fit)

    p = sub.add_parser("sweep", help="tune eta0 for every (family, N) and write the CSV table")
    p.add_argument("--config", help="INI file; every key below overrides it")
    p.add_argument("--no-resume", action="store_true")
    for section, keys in CONFIG_SCHEMA.items():
        group = p.add_argument_group(f"[{section}]")
        for key in keys:
            group.add_argument(f"--{key}", dest=key, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="fit log-log slopes from a sweep CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--family")
    p.add_argument("--column", choices=("loss", "eta0_star"), default="loss")
    p.add_argument("--full", action="store_true", help="use every N instead of the upper half")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("plot", help="emit a matplotlib script for a sweep CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--x", default="N")
    p.add_argument("--y", default="loss")
    p.add_argument("--guide", action="append", default=[], help="reference slope, repeatable")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
