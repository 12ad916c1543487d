"""Timing harness: median-of-R solves per (solver, thread count)."""
from __future__ import annotations

import csv
import io
import statistics
from dataclasses import asdict, dataclass, fields

from .caseio import CaseFile, bus_count
from .cim import CimOptions, solve_cim
from .linsolve import LinearSolverConfig
from .newton import NewtonOptions, PowerFlowSolution, solve_nr
from .synth import initial_state


@dataclass(frozen=True)
class BenchRecord:
    case: str
    n_buses: int
    solver: str
    thread_count: int
    iterations: int
    solve_time: float  # inner linear solves, summed over Newton iterations
    other_time: float  # Jacobian build/update plus mismatch evaluation
    converged: bool
    krylov_time: float = 0.0
    fallbacks: int = 0
    repeats: int = 1

    def __post_init__(self):
        if min(self.solve_time, self.other_time, self.krylov_time) < 0:
            raise ValueError("times must be non-negative")


BENCH_COLUMNS = [f.name for f in fields(BenchRecord)]


def run_case(
    case: CaseFile,
    solver: str = "direct",
    thread_count: int = 1,
    tol: float = 1e-8,
    max_iter: int | None = None,
    init: str = "auto",
    fallback: bool = True,
) -> PowerFlowSolution:
    """Solve a parsed case with the matching Newton driver.

    ``init="auto"`` starts from a profile stored in the case metadata when
    there is one (synthesized transmission cases) and from flat otherwise.
    """
    linear = LinearSolverConfig(kind=solver)
    if case.kind == "single_phase":
        start = initial_state(case) if init == "auto" else None
        opts = NewtonOptions(
            tol_angle=tol,
            tol_vm=tol,
            max_iter=30 if max_iter is None else max_iter,
            linear=linear,
            flat_start=start is None,
            fallback_to_direct=fallback,
        )
        return solve_nr(case.network, opts, thread_count, initial=start)
    opts = CimOptions(tol_v=tol, max_iter=50 if max_iter is None else max_iter, linear=linear, fallback_to_direct=fallback)
    return solve_cim(case.network, opts, thread_count)


def bench_case(
    case: CaseFile,
    threads=(1,),
    solvers=("krylov",),
    repeat: int = 5,
    warmup: bool = True,
    **solve_kw,
) -> list[BenchRecord]:
    """One record per (solver, thread count), timings are medians over ``repeat`` runs.

    Iteration counts and convergence flags must not change between repeats;
    a difference raises ``RuntimeError`` because it means the solve is not
    deterministic.
    """
    if repeat < 1:
        raise ValueError("repeat must be >= 1")
    out = []
    for solver in solvers:
        for t in threads:
            if warmup:
                run_case(case, solver, t, **solve_kw)
            runs = [run_case(case, solver, t, **solve_kw) for _ in range(repeat)]
            signature = {(r.iterations, r.converged, r.fallbacks) for r in runs}
            if len(signature) != 1:
                raise RuntimeError(f"non-deterministic solve for {solver} at {t} threads: {sorted(signature)}")
            first = runs[0]
            out.append(
                BenchRecord(
                    case=case.name,
                    n_buses=bus_count(case),
                    solver=solver,
                    thread_count=t,
                    iterations=first.iterations,
                    solve_time=statistics.median(r.solve_time for r in runs),
                    other_time=statistics.median(r.other_time for r in runs),
                    converged=first.converged,
                    krylov_time=statistics.median(r.timings["krylov_solve"] for r in runs),
                    fallbacks=first.fallbacks,
                    repeats=repeat,
                )
            )
    return out


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in records:
        row = asdict(r)
        for k in ("solve_time", "other_time", "krylov_time"):
            row[k] = f"{row[k]:.6f}"
        row["converged"] = "true" if r.converged else "false"
        w.writerow(row)
    return buf.getvalue()
