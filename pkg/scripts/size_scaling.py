"""Total solve time against system size for both replication schemes.

Transmission: IEEE-30 blocks (``--blocks``). Distribution: LV feeder replicas
(``--replicas``). Each row is a BenchRecord with the median over ``--repeat``
solves plus ``total_time`` and the ratio to the previous size.

    python scripts/size_scaling.py --replicas 1,2,4,8 --blocks 4,8,16,32 --out scaling.csv
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import asdict, dataclass

from gridflow.bench import bench_case
from gridflow.caseio import bundled_case
from gridflow.synth import SynthSpec, synthesize


@dataclass
class ScalingConfig:
    blocks: tuple[int, ...] = (4, 8, 16, 32)
    replicas: tuple[int, ...] = (1, 2, 4, 8)
    solver: str = "direct"
    threads: int = 1
    repeat: int = 5
    seed: int = 1


def run(cfg: ScalingConfig) -> list[dict]:
    rows = []
    series = [("ieee30", cfg.blocks), ("lv_feeder", cfg.replicas)]
    for name, sizes in series:
        base = bundled_case(name)
        prev = None
        for n in sizes:
            case = synthesize(base, SynthSpec(n, seed=cfg.seed))
            (rec,) = bench_case(case, (cfg.threads,), (cfg.solver,), cfg.repeat)
            row = asdict(rec)
            row["replication"] = n
            row["total_time"] = rec.solve_time + rec.other_time
            row["ratio_to_previous"] = row["total_time"] / prev if prev else ""
            prev = row["total_time"]
            rows.append(row)
    return rows


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--blocks", type=_ints, default=ScalingConfig.blocks)
    p.add_argument("--replicas", type=_ints, default=ScalingConfig.replicas)
    p.add_argument("--solver", choices=["direct", "krylov"], default=ScalingConfig.solver)
    p.add_argument("--threads", type=int, default=ScalingConfig.threads)
    p.add_argument("--repeat", type=int, default=ScalingConfig.repeat)
    p.add_argument("--seed", type=int, default=ScalingConfig.seed)
    p.add_argument("--out", help="CSV path (default stdout)")
    a = p.parse_args(argv)
    rows = run(ScalingConfig(a.blocks, a.replicas, a.solver, a.threads, a.repeat, a.seed))
    fh = open(a.out, "w", newline="") if a.out else sys.stdout
    w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if a.out:
        fh.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
