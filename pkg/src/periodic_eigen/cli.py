"""Command-line front end.

Exit codes: 0 success, 1 usage or input error, 2 solver failure,
3 verdict violation in ``verify``.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import ExpressionError, PeriodicEigenError, ProblemError, SolverError
from .floquet import principal_floquet
from .presets import PRESETS, preset
from .problem import load_problem, make_grid
from .spatial import averaged_problem_eig, frozen_time_average
from .sweep import emit, run_sweep

EXIT_USAGE = 1
EXIT_SOLVER = 2
EXIT_VERDICT = 3

VERIFY_TAUS = (0.01, 0.1, 1.0, 10.0, 100.0, 1000.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _tau_log(text: str) -> list:
    parts = text.split(",")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except (ValueError, IndexError):
        raise argparse.ArgumentTypeError("expected 'min,max,count'") from None
    if len(parts) != 3 or lo <= 0 or hi < lo or count < 1:
        raise argparse.ArgumentTypeError("expected 0 < min <= max and count >= 1")
    return [float(t) for t in np.geomspace(lo, hi, count)]


def _add_problem_args(p, allow_preset=True):
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--problem", metavar="FILE", help="problem definition (JSON)")
    if allow_preset:
        group.add_argument("--preset", choices=PRESETS, help="built-in problem")
    p.add_argument("--a-expr", help="diffusion a(t) for the ex1 preset")


def _add_grid_args(p):
    p.add_argument("--nx", type=int, default=128, help="interior nodes per axis (default 128)")
    p.add_argument("--ny", type=int, default=None, help="interior nodes along y (default nx)")
    p.add_argument("--nt", type=int, default=256, help="time steps per period (default 256)")
    p.add_argument("--tol", type=float, default=1e-10)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="periodic-eigen", description="Principal eigenvalues of time-periodic parabolic operators.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="lambda(tau) for one frequency")
    _add_problem_args(p)
    p.add_argument("--tau", type=float, required=True)
    _add_grid_args(p)

    p = sub.add_parser("sweep", help="lambda over a list of frequencies")
    _add_problem_args(p)
    taus = p.add_mutually_exclusive_group(required=True)
    taus.add_argument("--tau-list", type=_float_list, help='e.g. "0.1,1,10"')
    taus.add_argument("--tau-log", type=_tau_log, help='"min,max,count", log-spaced')
    p.add_argument("--derivative", action="store_true", help="add formula and finite-difference dlambda/dtau")
    p.add_argument("--limits", action="store_true", help="add the small- and large-tau limits")
    p.add_argument("--out", metavar="FILE", help="output file (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    _add_grid_args(p)

    p = sub.add_parser("limits", help="mean frozen-time eigenvalue and averaged-problem eigenvalue")
    _add_problem_args(p)
    _add_grid_args(p)

    p = sub.add_parser("verify", help="theorem verdicts for a preset")
    p.add_argument("--preset", choices=PRESETS, required=True)
    p.add_argument("--a-expr", help="diffusion a(t) for the ex1 preset")
    p.add_argument("--tau-list", type=_float_list, default=list(VERIFY_TAUS))
    p.add_argument("--slack", type=float, default=1e-4)
    _add_grid_args(p)
    return parser


def _load(args):
    if getattr(args, "problem", None):
        if args.a_expr:
            raise UsageError("--a-expr only applies to the ex1 preset")
        try:
            return load_problem(args.problem)
        except OSError as exc:
            raise UsageError(f"cannot read problem file: {exc}") from exc
    if args.a_expr and args.preset != "ex1":
        raise UsageError("--a-expr only applies to the ex1 preset")
    return preset(args.preset, a=args.a_expr)


def _grid(spec, args):
    return make_grid(spec, nx=args.nx, ny=args.ny, nt=args.nt)


def _print_json(doc, stream=None):
    stream = stream or sys.stdout
    stream.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def cmd_solve(args) -> int:
    spec = _load(args)
    sol = principal_floquet(spec, _grid(spec, args), args.tau, tol=args.tol)
    _print_json(
        {
            "tau": sol.tau,
            "lambda": sol.lam,
            "mu": sol.mu,
            "log_mu": sol.log_mu,
            "iterations": sol.iterations,
            "residual": sol.residual,
            "gap": sol.gap,
            "scheme": sol.scheme,
            "nt": sol.nt,
        }
    )
    return 0


def cmd_sweep(args) -> int:
    spec = _load(args)
    taus = args.tau_list if args.tau_list is not None else args.tau_log
    if not taus:
        raise UsageError("empty tau list")
    if any(t <= 0 for t in taus):
        raise UsageError("tau values must be positive")
    report = run_sweep(spec, _grid(spec, args), taus, args.derivative, args.limits, args.tol, max(1, args.jobs))
    data = emit(report, args.format)
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    return EXIT_SOLVER if report.failed else 0


def cmd_limits(args) -> int:
    spec = _load(args)
    grid = _grid(spec, args)
    _print_json(
        {
            "int_lambda0": frozen_time_average(spec, grid, tol=args.tol),
            "lambda_inf": averaged_problem_eig(spec, grid, tol=args.tol).lam,
        }
    )
    return 0


def cmd_verify(args) -> int:
    spec = preset(args.preset, a=args.a_expr) if args.a_expr else preset(args.preset)
    report = run_sweep(spec, _grid(spec, args), args.tau_list, limits=True, tol=args.tol, slack=args.slack)
    _print_json({"preset": args.preset, "rows": [[r.tau, r.lam] for r in report.rows], "limits": report.limits, **report.verdict})
    if report.failed:
        return EXIT_SOLVER
    return 0 if report.verdict["ok"] else EXIT_VERDICT


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "limits": cmd_limits, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ProblemError, ExpressionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except PeriodicEigenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
