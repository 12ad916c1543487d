import csv
import io
import os

import pytest

from gridflow.bench import BENCH_COLUMNS, BenchRecord, bench_case, records_to_csv, run_case
from gridflow.synth import SynthSpec, synthesize


def test_record_rejects_negative_times():
    with pytest.raises(ValueError):
        BenchRecord("c", 2, "direct", 1, 3, -1.0, 0.0, True)
    with pytest.raises(ValueError):
        BenchRecord("c", 2, "direct", 1, 3, 0.0, 0.0, True, krylov_time=-1e-9)


def test_columns_separate_solving_and_other():
    assert BENCH_COLUMNS[:8] == [
        "case", "n_buses", "solver", "thread_count", "iterations", "solve_time", "other_time", "converged"
    ]


def test_csv_format():
    text = records_to_csv([BenchRecord("x", 30, "krylov", 4, 3, 0.5, 0.25, False)])
    row = next(csv.DictReader(io.StringIO(text)))
    assert row["solve_time"] == "0.500000" and row["converged"] == "false" and row["thread_count"] == "4"


def test_bench_records(ieee30):
    recs = bench_case(ieee30, threads=(1, 2), solvers=("direct", "krylov"), repeat=3)
    assert [(r.solver, r.thread_count) for r in recs] == [("direct", 1), ("direct", 2), ("krylov", 1), ("krylov", 2)]
    assert all(r.converged and r.n_buses == 30 and r.repeats == 3 for r in recs)
    assert all(r.krylov_time == 0 for r in recs if r.solver == "direct")
    # the iteration path does not depend on the thread count
    assert len({r.iterations for r in recs if r.solver == "krylov"}) == 1


def test_bench_three_phase_counts_exclude_source(feeder_2bus):
    (rec,) = bench_case(feeder_2bus, solvers=("direct",), repeat=1)
    assert rec.n_buses == feeder_2bus.network.n_buses - 1


def test_bench_validation(ieee30):
    with pytest.raises(ValueError):
        bench_case(ieee30, repeat=0)


def test_run_case_uses_stored_warm_start(ieee30):
    case = synthesize(ieee30, SynthSpec(4, seed=2))
    warm = run_case(case, "direct", init="auto")
    flat = run_case(case, "direct", init="flat")
    assert warm.converged and flat.converged and warm.iterations <= flat.iterations


@pytest.mark.skipif((os.cpu_count() or 1) < 8, reason="thread sweep needs at least 8 cores")
def test_krylov_solve_time_falls_with_threads(ieee30):
    case = synthesize(ieee30, SynthSpec(400, seed=1))
    recs = bench_case(case, threads=(1, 2, 4, 8), solvers=("krylov",), repeat=5)
    times = [r.krylov_time for r in recs]
    assert all(b <= a for a, b in zip(times, times[1:]))
