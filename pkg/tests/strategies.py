"""Hypothesis strategies for random networks."""
from hypothesis import strategies as st

import numpy as np

from gridflow.network import Branch, Bus, SinglePhaseNetwork
from gridflow.threephase import Branch3, Bus3, ThreePhaseNetwork, ZipLoad


@st.composite
def networks(draw, max_buses=12, shunts=True, charging=True, pv=True):
    """Connected networks: a random spanning tree plus extra branches."""
    n = draw(st.integers(1, max_buses))
    imp = st.tuples(st.floats(0.0, 0.2), st.floats(0.01, 0.5))
    buses = [Bus(0, "slack")]
    for k in range(1, n):
        buses.append(
            Bus(
                k,
                draw(st.sampled_from(["pq", "pq", "pv"] if pv else ["pq"])),
                p_load=draw(st.floats(0, 0.3)),
                q_load=draw(st.floats(-0.05, 0.15)),
                p_gen=draw(st.floats(0, 0.2)),
                v_setpoint=draw(st.floats(0.98, 1.05)),
                shunt_b=draw(st.floats(0, 0.05)) if shunts else 0.0,
            )
        )
    branches = []
    for k in range(1, n):
        r, x = draw(imp)
        branches.append(Branch(draw(st.integers(0, k - 1)), k, r, x, draw(st.floats(0, 0.05)) if charging else 0.0))
    for _ in range(draw(st.integers(0, n))):
        a, b = draw(st.integers(0, n - 1)), draw(st.integers(0, n - 1))
        if a != b:
            r, x = draw(imp)
            branches.append(Branch(a, b, r, x))
    return SinglePhaseNetwork(buses, branches)


def balanced_feeder(net: SinglePhaseNetwork) -> ThreePhaseNetwork:
    """Three decoupled copies of a slack/PQ network, one per phase."""
    if any(b.kind == "pv" or b.shunt_g or b.shunt_b for b in net.buses):
        raise ValueError("only slack/PQ buses without shunts have a three-phase twin here")
    slack = next(b for b in net.buses if b.kind == "slack")
    buses = []
    for b in net.buses:
        loads = {} if b.kind == "slack" else {p: ZipLoad(p_p=b.p_load - b.p_gen, q_p=b.q_load) for p in "abc"}
        buses.append(Bus3(b.id, "abc", loads))
    eye = np.eye(3)
    branches = [
        Branch3(br.from_bus, br.to_bus, br.admittance * eye, "abc", 0.5j * br.b_charging * eye, 0.5j * br.b_charging * eye)
        for br in net.branches
    ]
    return ThreePhaseNetwork(buses, branches, slack.id, slack.v_setpoint)
