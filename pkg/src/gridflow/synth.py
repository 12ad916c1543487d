"""Scaled test systems by literal replication of a base case.

Randomness comes from SplitMix64 so a (base, spec) pair reproduces the same
network on any platform:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)            (all arithmetic mod 2**64)

Bounded integers use rejection sampling, and link sets are drawn by a partial
Fisher-Yates shuffle.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .network import Branch, Bus, SinglePhaseNetwork, _components, build_ybus
from .threephase import Bus3, ThreePhaseNetwork

MASK64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def sample(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), in draw order."""
        pool = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


@dataclass(frozen=True)
class SynthSpec:
    n_blocks: int = 1
    links_per_adjacent_pair: int = 2
    seed: int = 0
    ring: bool = False

    def __post_init__(self):
        if self.n_blocks < 1 or self.links_per_adjacent_pair < 1:
            raise ValueError("counts must be >= 1")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must fit in 64 unsigned bits")

    @property
    def n_replicas(self) -> int:
        return self.n_blocks

    def as_metadata(self) -> dict:
        return asdict(self)


def _solve_base(base: SinglePhaseNetwork):
    from .newton import solve_nr

    sol = solve_nr(base)
    if not sol.converged:
        raise ValueError("base case does not converge; cannot size the replicated generators")
    return sol.state


def _slack_generation(base: SinglePhaseNetwork, state) -> float:
    from .newton import calc_pq

    k = next(i for i, b in enumerate(base.buses) if b.kind == "slack")
    p, _ = calc_pq(build_ybus(base), state)
    return float(p[k] + base.buses[k].p_load)


def replicate_transmission(base: SinglePhaseNetwork, spec: SynthSpec) -> SinglePhaseNetwork:
    """Copy ``base`` ``n_blocks`` times and tie adjacent blocks with random links.

    Block ``k`` shifts every bus id by ``k * n``. A link reuses a sampled base
    branch ``(u, v)`` and connects ``u`` in block ``k`` to ``v`` in block
    ``k + 1`` with the same impedance; from the branch 29-30 of a 30-bus base
    this gives the link 29-60.

    Slack buses of blocks after the first become PV buses at the same voltage
    setpoint. Their active generation is the slack output of the solved base
    case, so every block covers its own losses and the ties carry little
    power; otherwise the deficit of all blocks piles up on the ties nearest
    the slack and large replicas have no solution.
    """
    if spec.links_per_adjacent_pair > len(base.branches):
        raise ValueError(
            f"links_per_adjacent_pair={spec.links_per_adjacent_pair} exceeds the {len(base.branches)} base branches"
        )
    if spec.n_blocks == 1:
        return base
    n = base.n_buses
    slack_gen = _slack_generation(base, _solve_base(base))
    buses: list[Bus] = []
    branches: list[Branch] = []
    for k in range(spec.n_blocks):
        off = k * n
        for b in base.buses:
            if b.kind == "slack" and k > 0:
                buses.append(replace(b, id=b.id + off, kind="pv", p_gen=slack_gen))
            else:
                buses.append(replace(b, id=b.id + off))
        for br in base.branches:
            branches.append(replace(br, from_bus=br.from_bus + off, to_bus=br.to_bus + off))
    pairs = [(k, k + 1) for k in range(spec.n_blocks - 1)]
    if spec.ring and spec.n_blocks > 2:
        pairs.append((spec.n_blocks - 1, 0))
    rng = SplitMix64(spec.seed)
    for ka, kb in pairs:
        for e in rng.sample(len(base.branches), spec.links_per_adjacent_pair):
            br = base.branches[e]
            branches.append(replace(br, from_bus=br.from_bus + ka * n, to_bus=br.to_bus + kb * n))
    return SinglePhaseNetwork(buses, branches, base.base_mva)


def _feed_point(base: ThreePhaseNetwork) -> tuple[int, int]:
    """Index of the single substation branch and the bus it feeds."""
    touching = [k for k, br in enumerate(base.branches) if base.source_bus in (br.from_bus, br.to_bus)]
    if len(touching) != 1:
        raise ValueError(f"source bus must have exactly one branch, found {len(touching)}")
    br = base.branches[touching[0]]
    return touching[0], br.to_bus if br.from_bus == base.source_bus else br.from_bus


def _check_radial(base: ThreePhaseNetwork):
    pos = base.position()
    edges = [(pos[br.from_bus], pos[br.to_bus]) for br in base.branches]
    if len(edges) != base.n_buses - 1 or len(_components(base.n_buses, edges)) != 1:
        raise ValueError("feeder replication needs a connected radial base")


def replicate_feeder(base: ThreePhaseNetwork, spec: SynthSpec) -> ThreePhaseNetwork:
    """Hang ``n_replicas`` copies of everything downstream of the feed bus on that bus.

    The substation branch admittance is multiplied by ``n_replicas`` (series
    impedance divided by it) so the aggregate voltage drop stays at the base level.
    """
    _check_radial(base)
    if spec.n_blocks == 1:
        return base
    sub_k, feed = _feed_point(base)
    fixed = {base.source_bus, feed}
    shift = max(b.id for b in base.buses) + 1
    n = spec.n_blocks

    def bus_id(i: int, r: int) -> int:
        return i if i in fixed else i + r * shift

    buses: list[Bus3] = [b for b in base.buses if b.id in fixed]
    for r in range(n):
        buses += [replace(b, id=b.id + r * shift) for b in base.buses if b.id not in fixed]
    sub = base.branches[sub_k]
    branches = [replace(sub, y_series=sub.y_series * n)]
    for r in range(n):
        for k, br in enumerate(base.branches):
            if k != sub_k:
                branches.append(replace(br, from_bus=bus_id(br.from_bus, r), to_bus=bus_id(br.to_bus, r)))
    return ThreePhaseNetwork(buses, branches, base.source_bus, base.source_vm, base.base_mva, base.base_kv)


def tiled_profile(base: SinglePhaseNetwork) -> dict:
    """Solved base voltages, to be repeated block by block as a Newton starting point.

    From a flat start every block looks lossless, so the whole system's
    losses appear as one surplus that must travel down the chain of blocks
    to the single slack; for a few hundred blocks the first Newton step
    overshoots by hundreds of radians. Starting from the tiled base solution
    avoids that.
    """
    st = _solve_base(base)
    return {"period": base.n_buses, "vm": [float(x) for x in st.magnitude], "va_rad": [float(x) for x in st.angle]}


def initial_state(case):
    """Starting voltages recorded in a synthesized case, or None."""
    from .network import VoltageState

    prof = case.metadata.get("initial_profile")
    if not prof or case.kind != "single_phase":
        return None
    reps, rem = divmod(case.network.n_buses, prof["period"])
    if rem or len(prof["vm"]) != prof["period"]:
        raise ValueError("initial_profile does not tile the network")
    return VoltageState(np.tile(np.asarray(prof["vm"], float), reps), np.tile(np.asarray(prof["va_rad"], float), reps))


def synthesize(case, spec: SynthSpec):
    """Replicate a CaseFile and record the recipe (and a warm start) in its metadata."""
    from .caseio import CaseFile

    meta = {
        "name": f"{case.name or 'case'}_x{spec.n_blocks}",
        "source": f"replicated from {case.name or 'case'}",
        "synth": spec.as_metadata(),
    }
    if case.kind == "single_phase":
        net = replicate_transmission(case.network, spec)
        if spec.n_blocks > 1:
            meta["initial_profile"] = tiled_profile(case.network)
    else:
        net = replicate_feeder(case.network, spec)
    return CaseFile(case.kind, net, meta)
