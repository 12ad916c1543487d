"""Regenerate the JSON fixtures in src/gridflow/data from public source files.

Inputs (paths given on the command line):
  --case30   MATPOWER/PYPOWER ``case30.py`` (30 buses, 41 branches, 6 generators)
  --lv       pandapower ``IEEE_European_LV_On_Peak_566.json`` network dump

The two-bus cases are defined inline. Running without the raw inputs only
rewrites those.
"""
from __future__ import annotations

import argparse
import importlib.util
import io
import json
from pathlib import Path

import numpy as np

from gridflow.caseio import CaseFile, write_case
from gridflow.network import Branch, Bus, SinglePhaseNetwork
from gridflow.threephase import Branch3, Bus3, ThreePhaseNetwork, ZipLoad

DATA = Path(__file__).resolve().parents[1] / "src" / "gridflow" / "data"


def two_bus() -> CaseFile:
    net = SinglePhaseNetwork(
        [Bus(1, "slack", v_setpoint=1.0), Bus(2, "pq", p_load=1.0)],
        [Branch(1, 2, 0.0, 0.1)],
        base_mva=100.0,
    )
    return CaseFile("single_phase", net, {"name": "two_bus", "source": "lossless line y = -j10, 1 p.u. load at bus 2"})


def coupled_admittance(zs: complex, zm: complex) -> np.ndarray:
    """Inverse of a transposed-line impedance block, zs on the diagonal and zm off it.

    The inverse has the same two-value form, so it is built from the
    sequence admittances directly and comes out exactly symmetric.
    """
    y1, y0 = 1.0 / (zs - zm), 1.0 / (zs + 2.0 * zm)
    ys, ym = (2.0 * y1 + y0) / 3.0, (y0 - y1) / 3.0
    return np.full((3, 3), ym) + np.eye(3) * (ys - ym)


def two_bus_feeder() -> CaseFile:
    zs, zm = 0.02 + 0.06j, 0.005 + 0.02j
    loads = {
        "a": ZipLoad(p_p=0.30, p_i=0.05, p_z=0.05, q_p=0.10, q_i=0.02, q_z=0.03),
        "b": ZipLoad(p_p=0.20, p_z=0.10, q_p=0.08, q_z=0.02),
        "c": ZipLoad(p_p=0.35, p_i=0.10, q_p=0.12, q_i=0.04),
    }
    net = ThreePhaseNetwork(
        [Bus3(0, "abc"), Bus3(1, "abc", loads)],
        [Branch3(0, 1, coupled_admittance(zs, zm))],
        source_bus=0,
        source_vm=1.0,
    )
    return CaseFile("three_phase", net, {"name": "feeder_2bus", "source": "coupled line with unbalanced ZIP loads"})


def ieee30(path: Path) -> CaseFile:
    spec = importlib.util.spec_from_file_location("case30_src", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    ppc = mod.case30()
    base = float(ppc["baseMVA"])
    gens: dict[int, list] = {}
    for g in ppc["gen"]:
        gens.setdefault(int(g[0]), []).append(g)
    kinds = {1: "pq", 2: "pv", 3: "slack"}
    buses = []
    for row in ppc["bus"]:
        bid = int(row[0])
        gl = gens.get(bid, [])
        buses.append(
            Bus(
                id=bid,
                kind=kinds[int(row[1])],
                p_load=float(row[2]) / base,
                q_load=float(row[3]) / base,
                p_gen=sum(float(g[1]) for g in gl) / base,
                v_setpoint=float(gl[0][5]) if gl else 1.0,
                shunt_g=float(row[4]) / base,
                shunt_b=float(row[5]) / base,
            )
        )
    branches = []
    for row in ppc["branch"]:
        if row[8] not in (0, 1) or row[9] != 0:
            raise ValueError("off-nominal taps and phase shifters are not modeled")
        branches.append(Branch(int(row[0]), int(row[1]), float(row[2]), float(row[3]), float(row[4])))
    return CaseFile(
        "single_phase",
        SinglePhaseNetwork(buses, branches, base),
        {"name": "ieee30", "source": "MATPOWER case30 (PYPOWER transcription), per-unit on 100 MVA"},
    )


def lv_feeder(path: Path) -> CaseFile:
    import pandas as pd

    raw = json.loads(path.read_text())["_object"]

    def table(name):
        return pd.read_json(io.StringIO(raw[name]["_object"]), orient="split")

    bus, line, trafo = table("bus"), table("line"), table("trafo")
    loads, ext = table("asymmetric_load"), table("ext_grid")
    s_base = 1.0  # MVA, three-phase
    v_base = float(trafo.vn_lv_kv.iloc[0])
    z_base = v_base**2 / s_base

    src = int(ext.bus.iloc[0])
    per_bus: dict[int, dict] = {}
    for _, ld in loads.iterrows():
        if not ld.in_service or ld.type != "wye":
            continue
        for ph in "abc":
            p = 3.0 * float(ld[f"p_{ph}_mw"]) * float(ld.scaling) / s_base
            q = 3.0 * float(ld[f"q_{ph}_mvar"]) * float(ld.scaling) / s_base
            if p or q:
                prev = per_bus.setdefault(int(ld.bus), {}).get(ph, ZipLoad())
                per_bus[int(ld.bus)][ph] = ZipLoad(p_p=prev.p_p + p, q_p=prev.q_p + q)
    buses = [Bus3(int(b), "abc", per_bus.get(int(b), {})) for b in bus.index]

    branches = []
    (t,) = trafo.itertuples()
    zk = t.vk_percent / 100.0 * s_base / t.sn_mva
    rk = t.vkr_percent / 100.0 * s_base / t.sn_mva
    zt = complex(rk, np.sqrt(zk * zk - rk * rk))
    branches.append(Branch3(int(t.hv_bus), int(t.lv_bus), np.eye(3) / zt))
    for ln in line.itertuples():
        if not ln.in_service:
            continue
        length = ln.length_km / ln.parallel
        z1 = complex(ln.r_ohm_per_km, ln.x_ohm_per_km) * length / z_base
        z0 = complex(ln.r0_ohm_per_km, ln.x0_ohm_per_km) * length / z_base
        zs, zm = (2 * z1 + z0) / 3, (z0 - z1) / 3
        branches.append(Branch3(int(ln.from_bus), int(ln.to_bus), coupled_admittance(zs, zm)))
    net = ThreePhaseNetwork(buses, branches, src, float(ext.vm_pu.iloc[0]), s_base, v_base)
    meta = {
        "name": "lv_feeder",
        "source": (
            "IEEE European LV test feeder, on-peak snapshot (pandapower IEEE_European_LV_On_Peak_566); "
            "lines from sequence impedances, transformer as diagonal series impedance, "
            "base 1 MVA / 0.416 kV"
        ),
    }
    return CaseFile("three_phase", net, meta)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--case30", type=Path)
    ap.add_argument("--lv", type=Path)
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    cases = [two_bus(), two_bus_feeder()]
    if args.case30:
        cases.append(ieee30(args.case30))
    if args.lv:
        cases.append(lv_feeder(args.lv))
    for c in cases:
        target = args.out / f"{c.name}.json"
        target.write_text(write_case(c))
        print(f"wrote {target} ({c.network.n_buses} buses, {len(c.network.branches)} branches)")


if __name__ == "__main__":
    main()
