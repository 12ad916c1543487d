"""Unbalanced three-phase network model: phase-node indexing, 3x3 branch blocks, ZIP loads."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import Violation, _components
from .sparse import SparseMatrix, matrix_from_coo

PHASES = "abc"
NOMINAL_ANGLE = {"a": 0.0, "b": -2.0 * np.pi / 3.0, "c": 2.0 * np.pi / 3.0}


def _phase_set(phases: str) -> str:
    phases = phases.lower()
    if not phases or any(p not in PHASES for p in phases) or len(set(phases)) != len(phases):
        raise ValueError(f"invalid phase set {phases!r}")
    return "".join(p for p in PHASES if p in phases)


def phase_index(bus_number: int, phase: str) -> int:
    """One-based flat index ``3 (i - 1) + phi`` with ``phi(a, b, c) = 1, 2, 3``."""
    if bus_number < 1:
        raise ValueError("bus numbers start at 1")
    if phase not in PHASES or len(phase) != 1:
        raise ValueError(f"unknown phase {phase!r}")
    return 3 * (bus_number - 1) + PHASES.index(phase) + 1


@dataclass(frozen=True)
class ZipLoad:
    """Per-phase wye load, consumption positive, per-unit on the per-phase base."""

    p_p: float = 0.0
    p_i: float = 0.0
    p_z: float = 0.0
    q_p: float = 0.0
    q_i: float = 0.0
    q_z: float = 0.0

    def is_zero(self) -> bool:
        return not any((self.p_p, self.p_i, self.p_z, self.q_p, self.q_i, self.q_z))


@dataclass(frozen=True)
class Bus3:
    id: int
    phases: str = "abc"
    loads: dict = field(default_factory=dict)  # phase -> ZipLoad

    def __post_init__(self):
        object.__setattr__(self, "phases", _phase_set(self.phases))
        object.__setattr__(self, "loads", {p: self.loads[p] for p in PHASES if p in self.loads})

    def load(self, phase: str) -> ZipLoad:
        return self.loads.get(phase, ZipLoad())

    def nominal_angle(self, phase: str) -> float:
        return NOMINAL_ANGLE[phase]


def _block(a) -> np.ndarray:
    a = np.zeros((3, 3), dtype=complex) if a is None else np.array(a, dtype=complex)
    if a.shape != (3, 3):
        raise ValueError("admittance blocks must be 3x3")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Branch3:
    from_bus: int
    to_bus: int
    y_series: np.ndarray
    phases: str = "abc"
    y_shunt_from: np.ndarray | None = None
    y_shunt_to: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "phases", _phase_set(self.phases))
        object.__setattr__(self, "y_series", _block(self.y_series))
        object.__setattr__(self, "y_shunt_from", _block(self.y_shunt_from))
        object.__setattr__(self, "y_shunt_to", _block(self.y_shunt_to))

    @property
    def phase_idx(self) -> list[int]:
        return [PHASES.index(p) for p in self.phases]

    def __eq__(self, other):
        if not isinstance(other, Branch3):
            return NotImplemented
        return (
            (self.from_bus, self.to_bus, self.phases) == (other.from_bus, other.to_bus, other.phases)
            and np.array_equal(self.y_series, other.y_series)
            and np.array_equal(self.y_shunt_from, other.y_shunt_from)
            and np.array_equal(self.y_shunt_to, other.y_shunt_to)
        )


@dataclass(frozen=True)
class ThreePhaseNetwork:
    buses: tuple[Bus3, ...]
    branches: tuple[Branch3, ...]
    source_bus: int
    source_vm: float = 1.0
    base_mva: float = 1.0
    base_kv: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    def position(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}


class PhaseIndex:
    """Compact 0-based numbering of present phase-nodes, bus by bus in phase order."""

    def __init__(self, net: ThreePhaseNetwork):
        self.net = net
        self._pos = net.position()
        self._map: dict[tuple[int, str], int] = {}
        bus, phase = [], []
        for k, b in enumerate(net.buses):
            for p in b.phases:
                self._map[(b.id, p)] = len(bus)
                bus.append(k)
                phase.append(PHASES.index(p))
        self.bus = np.array(bus, dtype=np.int64)  # bus position of each phase-node
        self.phase = np.array(phase, dtype=np.int64)
        self.size = len(bus)

    def compact(self, bus_id: int, phase: str) -> int:
        try:
            return self._map[(bus_id, phase)]
        except KeyError:
            raise KeyError(f"phase {phase!r} is not present at bus {bus_id}") from None

    def ordinal(self, bus_id: int, phase: str) -> int:
        """Diagnostic form: one-based bus ordinal, three slots per bus."""
        self.compact(bus_id, phase)
        return phase_index(self._pos[bus_id] + 1, phase)

    def nominal(self, vm: float = 1.0) -> np.ndarray:
        angles = np.array([NOMINAL_ANGLE[PHASES[p]] for p in self.phase])
        return vm * np.exp(1j * angles)


def build_ybus3(net: ThreePhaseNetwork, index: PhaseIndex | None = None) -> SparseMatrix:
    """Phase-node admittance matrix: -Y_series off the diagonal, incident series plus shunt blocks on it."""
    index = PhaseIndex(net) if index is None else index
    pos = net.position()
    # same summation order as the single-phase builder: all from-end diagonal
    # blocks, all to-end blocks, then mirror pairs listed low bus first
    groups = [([], [], []) for _ in range(4)]
    for br in net.branches:
        ph = br.phase_idx
        f = np.array([index.compact(br.from_bus, PHASES[p]) for p in ph])
        t = np.array([index.compact(br.to_bus, PHASES[p]) for p in ph])
        lo, hi = (f, t) if pos[br.from_bus] <= pos[br.to_bus] else (t, f)
        ys = br.y_series[np.ix_(ph, ph)]
        for g, (ri, ci, block) in zip(
            groups,
            (
                (f, f, ys + br.y_shunt_from[np.ix_(ph, ph)]),
                (t, t, ys + br.y_shunt_to[np.ix_(ph, ph)]),
                (lo, hi, -ys),
                (hi, lo, -ys),
            ),
        ):
            nz = block != 0
            rr, cc = np.nonzero(nz)
            g[0].append(ri[rr])
            g[1].append(ci[cc])
            g[2].append(block[nz])
    rows = [a for g in groups for a in g[0]]
    cols = [a for g in groups for a in g[1]]
    vals = [a for g in groups for a in g[2]]
    # keep every phase-node on the diagonal, even if isolated
    d = np.arange(index.size)
    rows.append(d)
    cols.append(d)
    vals.append(np.zeros(index.size, dtype=complex))
    return matrix_from_coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), index.size, index.size)


def zip_load(bus: Bus3, phase: str, vm: float) -> tuple[float, float]:
    ld = bus.load(phase)
    return (
        ld.p_p + ld.p_i * vm + ld.p_z * vm * vm,
        ld.q_p + ld.q_i * vm + ld.q_z * vm * vm,
    )


def validate_network3(net: ThreePhaseNetwork, path: str = "$") -> list[Violation]:
    out: list[Violation] = []
    seen: dict[int, int] = {}
    for k, b in enumerate(net.buses):
        where = f"{path}.buses[{k}]"
        if b.id in seen:
            out.append(Violation("duplicate_bus", f"bus id {b.id} appears twice", where))
        seen.setdefault(b.id, k)
        for p, ld in b.loads.items():
            if p not in b.phases:
                out.append(Violation("load_on_absent_phase", f"bus {b.id} has a load on absent phase {p}", f"{where}.loads.{p}"))
            vals = (ld.p_p, ld.p_i, ld.p_z, ld.q_p, ld.q_i, ld.q_z)
            if not all(np.isfinite(vals)):
                out.append(Violation("non_finite", f"bus {b.id} phase {p} load is not finite", f"{where}.loads.{p}"))
    if net.source_bus not in seen:
        out.append(Violation("missing_source", f"source bus {net.source_bus} does not exist", f"{path}.source_bus"))
    elif net.buses[seen[net.source_bus]].phases != "abc":
        out.append(Violation("source_phases", "source bus must carry all three phases", f"{path}.source_bus"))
    if not net.source_vm > 0:
        out.append(Violation("bad_source_voltage", "source_vm must be > 0", f"{path}.source_vm"))
    edges = []
    for k, br in enumerate(net.branches):
        where = f"{path}.branches[{k}]"
        ok = True
        for e in (br.from_bus, br.to_bus):
            if e not in seen:
                out.append(Violation("dangling_branch", f"branch {k} references missing bus {e}", where))
                ok = False
            elif any(p not in net.buses[seen[e]].phases for p in br.phases):
                out.append(Violation("phase_mismatch", f"branch {k} phases {br.phases} not all present at bus {e}", where))
        if br.from_bus == br.to_bus:
            out.append(Violation("self_loop", f"branch {k} connects bus {br.from_bus} to itself", where))
        absent = [PHASES.index(p) for p in PHASES if p not in br.phases]
        for name in ("y_series", "y_shunt_from", "y_shunt_to"):
            blk = getattr(br, name)
            if absent and (np.any(blk[absent, :] != 0) or np.any(blk[:, absent] != 0)):
                out.append(Violation("absent_phase_entries", f"branch {k} {name} has entries on absent phases", f"{where}.{name}"))
            if not np.all(np.isfinite(blk)):
                out.append(Violation("non_finite", f"branch {k} {name} is not finite", f"{where}.{name}"))
        ph = br.phase_idx
        ys = br.y_series[np.ix_(ph, ph)]
        if np.all(np.isfinite(ys)) and abs(np.linalg.det(ys)) == 0:
            out.append(Violation("singular_branch", f"branch {k} series admittance is singular", f"{where}.y_series"))
        if ok:
            edges.append((seen[br.from_bus], seen[br.to_bus]))
    if net.buses:
        comps = _components(len(net.buses), edges)
        if len(comps) > 1:
            out.append(Violation("disconnected", f"network splits into {len(comps)} islands", f"{path}.branches"))
    return out
