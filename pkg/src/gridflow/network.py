"""Single-phase (balanced) network model and bus admittance matrix."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .sparse import SparseMatrix, matrix_from_coo

BusKind = Literal["slack", "pv", "pq"]


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind = "pq"
    p_load: float = 0.0
    q_load: float = 0.0
    p_gen: float = 0.0
    v_setpoint: float = 1.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0

    @property
    def admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class SinglePhaseNetwork:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    def position(self) -> dict[int, int]:
        """Map bus id to its row in the admittance matrix."""
        return {b.id: k for k, b in enumerate(self.buses)}

    def kinds(self) -> np.ndarray:
        return np.array([b.kind for b in self.buses])


@dataclass
class VoltageState:
    magnitude: np.ndarray
    angle: np.ndarray

    @property
    def complex(self) -> np.ndarray:
        return self.magnitude * np.exp(1j * self.angle)

    @classmethod
    def from_complex(cls, v) -> "VoltageState":
        v = np.asarray(v)
        return cls(np.abs(v), np.angle(v))

    def copy(self) -> "VoltageState":
        return VoltageState(self.magnitude.copy(), self.angle.copy())


class ZeroImpedanceError(ValueError):
    pass


def build_ybus(net: SinglePhaseNetwork) -> SparseMatrix:
    """Bus admittance matrix with pi-model line charging and bus shunts."""
    pos = net.position()
    n = net.n_buses
    rows, cols, vals = [], [], []
    if net.branches:
        f = np.array([pos[br.from_bus] for br in net.branches])
        t = np.array([pos[br.to_bus] for br in net.branches])
        z = np.array([complex(br.r, br.x) for br in net.branches])
        if np.any(z == 0):
            k = int(np.flatnonzero(z == 0)[0])
            br = net.branches[k]
            raise ZeroImpedanceError(f"branch {k} ({br.from_bus}-{br.to_bus}) has zero series impedance")
        y = np.array([br.admittance for br in net.branches])
        half_b = 0.5j * np.array([br.b_charging for br in net.branches])
        # list each mirror pair as (low, high) and (high, low) so parallel
        # branches are summed in the same order on both sides: Y stays exactly symmetric
        lo, hi = np.minimum(f, t), np.maximum(f, t)
        rows += [f, t, lo, hi]
        cols += [f, t, hi, lo]
        vals += [y + half_b, y + half_b, -y, -y]
    idx = np.arange(n)
    rows.append(idx)
    cols.append(idx)
    vals.append(np.array([complex(b.shunt_g, b.shunt_b) for b in net.buses], dtype=complex))
    return matrix_from_coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), n, n)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    path: str = "$"


def _components(n: int, edges) -> list[list[int]]:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for v in range(n):
        groups.setdefault(find(v), []).append(v)
    return list(groups.values())


def validate_network(net: SinglePhaseNetwork, path: str = "$") -> list[Violation]:
    """Structural checks; an empty list means the network is solvable as posed."""
    out: list[Violation] = []
    seen: dict[int, int] = {}
    for k, b in enumerate(net.buses):
        where = f"{path}.buses[{k}]"
        if b.id in seen:
            out.append(Violation("duplicate_bus", f"bus id {b.id} appears twice", where))
        seen.setdefault(b.id, k)
        if b.kind not in ("slack", "pv", "pq"):
            out.append(Violation("bad_kind", f"bus {b.id} has unknown kind {b.kind!r}", where))
        if b.kind in ("slack", "pv") and not b.v_setpoint > 0:
            out.append(Violation("bad_setpoint", f"bus {b.id} needs v_setpoint > 0", where))
    n_slack = sum(b.kind == "slack" for b in net.buses)
    if n_slack != 1:
        out.append(Violation("slack_count", f"expected exactly one slack bus, found {n_slack}", f"{path}.buses"))

    edges = []
    for k, br in enumerate(net.branches):
        where = f"{path}.branches[{k}]"
        missing = [e for e in (br.from_bus, br.to_bus) if e not in seen]
        for e in missing:
            out.append(Violation("dangling_branch", f"branch {k} references missing bus {e}", where))
        if br.from_bus == br.to_bus:
            out.append(Violation("self_loop", f"branch {k} connects bus {br.from_bus} to itself", where))
        if br.r == 0 and br.x == 0:
            out.append(Violation("zero_impedance", f"branch {k} has zero series impedance", where))
        if not missing:
            edges.append((seen[br.from_bus], seen[br.to_bus]))
    if net.buses:
        comps = _components(len(net.buses), edges)
        if len(comps) > 1:
            sizes = sorted(len(c) for c in comps)
            out.append(
                Violation("disconnected", f"network splits into {len(comps)} islands (sizes {sizes})", f"{path}.branches")
            )
    return out
