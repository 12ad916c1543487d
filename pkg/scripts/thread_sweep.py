"""Krylov solve time against thread count on a replicated transmission case.

Writes one BenchRecord row per thread count plus a ``spmv_time`` column with
the median time of ``--spmv-calls`` products on the Jacobian at the start
point, which isolates the parallel kernel from the Newton bookkeeping.

    python scripts/thread_sweep.py --blocks 200 --threads 1,2,4,8 --out sweep.csv
"""
from __future__ import annotations

import argparse
import csv
import statistics
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from gridflow.bench import bench_case
from gridflow.caseio import bundled_case
from gridflow.newton import build_jacobian, flat_start
from gridflow.sparse import spmv
from gridflow.synth import SynthSpec, initial_state, synthesize


@dataclass
class SweepConfig:
    blocks: int = 200
    links: int = 2
    seed: int = 1
    threads: tuple[int, ...] = (1, 2, 4, 8)
    repeat: int = 5
    spmv_calls: int = 200


def spmv_time(J, threads: int, calls: int, repeat: int) -> float:
    x = np.ones(J.n_cols)
    spmv(J, x, threads)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        for _ in range(calls):
            spmv(J, x, threads)
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def run(cfg: SweepConfig) -> list[dict]:
    case = synthesize(bundled_case("ieee30"), SynthSpec(cfg.blocks, cfg.links, cfg.seed))
    start = initial_state(case) or flat_start(case.network)
    J = build_jacobian(case.network, start)
    rows = []
    for rec in bench_case(case, cfg.threads, ("krylov",), cfg.repeat):
        row = asdict(rec)
        row["spmv_time"] = spmv_time(J, rec.thread_count, cfg.spmv_calls, cfg.repeat)
        rows.append(row)
    return rows


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--blocks", type=int, default=SweepConfig.blocks)
    p.add_argument("--links", type=int, default=SweepConfig.links)
    p.add_argument("--seed", type=int, default=SweepConfig.seed)
    p.add_argument("--threads", default="1,2,4,8")
    p.add_argument("--repeat", type=int, default=SweepConfig.repeat)
    p.add_argument("--spmv-calls", type=int, default=SweepConfig.spmv_calls)
    p.add_argument("--out", help="CSV path (default stdout)")
    a = p.parse_args(argv)
    cfg = SweepConfig(a.blocks, a.links, a.seed, tuple(int(t) for t in a.threads.split(",")), a.repeat, a.spmv_calls)
    rows = run(cfg)
    fh = open(a.out, "w", newline="") if a.out else sys.stdout
    w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if a.out:
        fh.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
