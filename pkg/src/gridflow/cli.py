"""Command-line entry point: ``gridflow solve|synth|bench``.

Exit codes: 0 success, 1 non-convergence, 2 input error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import traceback

from .bench import bench_case, records_to_csv, run_case
from .caseio import CaseError, load_case, write_case, write_solution
from .cim import NearZeroVoltageError
from .linsolve import KrylovBreakdownError, KrylovNotConvergedError
from .newton import NewtonSingularError
from .synth import SynthSpec, synthesize

EXIT_OK, EXIT_NONCONVERGED, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3
THREADS_ENV = "GRIDFLOW_THREADS"


class InputError(Exception):
    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(message)


class NonConvergence(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message, "argv")


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"{THREADS_ENV}={raw!r} is not an integer", THREADS_ENV) from None
    if n < 1:
        raise InputError(f"{THREADS_ENV} must be >= 1", THREADS_ENV)
    return n


def _positive_int(s: str) -> int:
    n = int(s)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _positive_float(s: str) -> float:
    x = float(s)
    if not x > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return x


def _thread_list(s: str) -> list[int]:
    try:
        out = [int(p) for p in s.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad thread list {s!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("thread counts must be >= 1")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gridflow", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--error-json", action="store_true", help="report failures as a JSON object on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, **kw):
        sp = sub.add_parser(name, **kw)
        sp.add_argument("--error-json", action="store_true", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
        return sp

    s = add("solve", help="run a power flow")
    s.add_argument("--case", required=True)
    s.add_argument("--solver", choices=["direct", "krylov"], default="direct")
    s.add_argument("--threads", type=_positive_int, default=None, help=f"default: ${THREADS_ENV} or 1")
    s.add_argument("--tol", type=_positive_float, default=1e-8)
    s.add_argument("--max-iter", type=_positive_int, default=None)
    s.add_argument("--init", choices=["auto", "flat"], default="auto", help="auto uses a stored warm start if the case has one")
    s.add_argument("--no-fallback", action="store_true", help="fail instead of retrying a Krylov failure with LU")
    s.add_argument("--out", choices=["json", "csv"], default="json")
    s.add_argument("--output", help="write here instead of stdout")

    y = add("synth", help="replicate a base case")
    y.add_argument("--base", required=True)
    g = y.add_mutually_exclusive_group(required=True)
    g.add_argument("--blocks", type=_positive_int, help="transmission blocks")
    g.add_argument("--replicas", type=_positive_int, help="feeder replicas")
    y.add_argument("--links", type=_positive_int, default=2)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--ring", action="store_true", help="also link the last block to the first")
    y.add_argument("--out", required=True, help="output case file")

    b = add("bench", help="time solves over thread counts")
    b.add_argument("--case", required=True)
    b.add_argument("--threads", type=_thread_list, default=None, help="comma list, e.g. 1,2,4,8")
    b.add_argument("--solver", default="krylov", help="comma list of direct,krylov")
    b.add_argument("--repeat", type=_positive_int, default=5)
    b.add_argument("--tol", type=_positive_float, default=1e-8)
    b.add_argument("--max-iter", type=_positive_int, default=None)
    b.add_argument("--init", choices=["auto", "flat"], default="auto")
    b.add_argument("--out", choices=["csv"], default="csv")
    b.add_argument("--output")
    return p


def _read_case(path):
    try:
        return load_case(path)
    except OSError as exc:
        raise InputError(f"cannot read case: {exc.strerror}", path) from None


def _emit(text: str, path: str | None):
    if path:
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise InputError(f"cannot write output: {exc.strerror}", path) from None
    else:
        sys.stdout.write(text)


def cmd_solve(args) -> int:
    case = _read_case(args.case)
    threads = args.threads or _default_threads()
    sol = run_case(
        case,
        args.solver,
        threads,
        tol=args.tol,
        max_iter=args.max_iter,
        init=args.init,
        fallback=not args.no_fallback,
    )
    _emit(write_solution(sol, case.network, args.out), args.output)
    if not sol.converged:
        raise NonConvergence(f"no convergence after {sol.iterations} iterations (mismatch {sol.mismatch_history[-1]:.3e})")
    return EXIT_OK


def cmd_synth(args) -> int:
    base = _read_case(args.base)
    if args.blocks is not None and base.kind != "single_phase":
        raise InputError("--blocks needs a single-phase base; use --replicas for feeders", "--blocks")
    if args.replicas is not None and base.kind != "three_phase":
        raise InputError("--replicas needs a three-phase base; use --blocks for transmission cases", "--replicas")
    try:
        spec = SynthSpec(args.blocks or args.replicas, args.links, args.seed, args.ring)
        out = synthesize(base, spec)
    except ValueError as exc:
        raise InputError(str(exc), args.base) from None
    _emit(write_case(out), args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    case = _read_case(args.case)
    threads = args.threads or [_default_threads()]
    solvers = [s.strip() for s in args.solver.split(",") if s.strip()]
    bad = [s for s in solvers if s not in ("direct", "krylov")]
    if bad or not solvers:
        raise InputError(f"unknown solver(s) {bad}", "--solver")
    records = bench_case(case, threads, solvers, args.repeat, tol=args.tol, max_iter=args.max_iter, init=args.init)
    _emit(records_to_csv(records), args.output)
    if not all(r.converged for r in records):
        raise NonConvergence("at least one benchmark configuration did not converge")
    return EXIT_OK


def _report(args_json: bool, code: int, kind: str, message: str, location=None) -> int:
    if args_json:
        err = {"error": {"exit_code": code, "type": kind, "message": message, "location": location}}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    else:
        where = f" [{location}]" if location else ""
        sys.stderr.write(f"gridflow: {kind}: {message}{where}\n")
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    want_json = "--error-json" in argv
    try:
        args = build_parser().parse_args(argv)
        handler = {"solve": cmd_solve, "synth": cmd_synth, "bench": cmd_bench}[args.command]
        return handler(args)
    except InputError as exc:
        return _report(want_json, EXIT_INPUT, "input_error", str(exc), exc.location)
    except CaseError as exc:
        return _report(want_json, EXIT_INPUT, type(exc).__name__, str(exc), exc.location)
    except (NonConvergence, NearZeroVoltageError, NewtonSingularError, KrylovNotConvergedError, KrylovBreakdownError) as exc:
        return _report(want_json, EXIT_NONCONVERGED, "non_convergence", str(exc))
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        if not want_json:
            traceback.print_exc()
        return _report(want_json, EXIT_INTERNAL, "internal_error", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
