"""Drive the installed CLI end to end and check every exit-code contract.

Each check runs ``python -m gridflow.cli`` in a fresh process. The internal
error path has no natural trigger, so that check patches the solver inside the
child process before calling ``main``.

Prints one line per check and exits non-zero if any fails.
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

from gridflow.caseio import bundled_case, write_case

CRASH = (
    "import sys, gridflow.cli as c\n"
    "def boom(*a, **k): raise RuntimeError('injected')\n"
    "c.run_case = boom\n"
    "sys.exit(c.main(sys.argv[1:]))\n"
)


@dataclass
class Check:
    name: str
    expected: int
    got: int
    error_json_ok: bool = True

    @property
    def ok(self) -> bool:
        return self.got == self.expected and self.error_json_ok


def _run(argv, env=None, code=None):
    e = {k: v for k, v in os.environ.items() if k != "GRIDFLOW_THREADS"}
    e.update(env or {})
    head = [sys.executable, "-c", code] if code else [sys.executable, "-m", "gridflow.cli"]
    return subprocess.run(head + list(argv), capture_output=True, text=True, env=e, timeout=600)


def _error_doc(stderr: str, code: int) -> bool:
    try:
        err = json.loads(stderr.strip().splitlines()[-1])["error"]
    except (ValueError, KeyError, IndexError):
        return False
    return err["exit_code"] == code and {"type", "message", "location"} <= set(err)


def run_checks(workdir: Path) -> list[Check]:
    for name in ("two_bus", "ieee30", "feeder_2bus"):
        (workdir / f"{name}.json").write_text(write_case(bundled_case(name)))
    two, ieee, feeder = (str(workdir / f"{n}.json") for n in ("two_bus", "ieee30", "feeder_2bus"))
    bad = workdir / "truncated.json"
    bad.write_text(Path(two).read_text()[:40])
    cases = [
        ("solve direct", 0, ["solve", "--case", ieee], None, None),
        ("solve krylov", 0, ["solve", "--case", ieee, "--solver", "krylov", "--threads", "2"], None, None),
        ("solve three-phase csv", 0, ["solve", "--case", feeder, "--out", "csv"], None, None),
        ("synth", 0, ["synth", "--base", ieee, "--blocks", "2", "--seed", "7", "--out", str(workdir / "x2.json")], None, None),
        ("bench", 0, ["bench", "--case", two, "--threads", "1,2", "--repeat", "1"], None, None),
        ("max-iter reached", 1, ["solve", "--case", ieee, "--max-iter", "1"], None, None),
        ("missing case file", 2, ["solve", "--case", str(workdir / "absent.json")], None, None),
        ("truncated case file", 2, ["solve", "--case", str(bad)], None, None),
        ("unknown solver", 2, ["solve", "--case", two, "--solver", "gmres"], None, None),
        ("bad thread env", 2, ["solve", "--case", two], {"GRIDFLOW_THREADS": "zero"}, None),
        ("too many links", 2, ["synth", "--base", ieee, "--blocks", "2", "--links", "99", "--out", str(workdir / "y.json")], None, None),
        ("internal error", 3, ["solve", "--case", two], None, CRASH),
    ]
    out = []
    for name, expected, argv, env, code in cases:
        r = _run(["--error-json", *argv] if expected else argv, env, code)
        json_ok = expected == 0 or _error_doc(r.stderr, expected)
        out.append(Check(name, expected, r.returncode, json_ok))
    return out


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--workdir", help="keep generated files here (default: a temporary directory)")
    args = p.parse_args(argv)
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(args.workdir or tmp)
        work.mkdir(parents=True, exist_ok=True)
        checks = run_checks(work)
    for c in checks:
        print(f"{'ok  ' if c.ok else 'FAIL'} {c.name}: exit {c.got} (expected {c.expected})")
    return 0 if all(c.ok for c in checks) else 1


if __name__ == "__main__":
    sys.exit(main())
