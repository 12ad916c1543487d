"""Current-injection Newton power flow for unbalanced three-phase feeders.

Unknowns and residuals are real vectors built bus by bus. For a bus with
``k`` present phases its block holds, in order, the imaginary then real
parts of the current mismatch (rows) and the real then imaginary parts of
the voltage correction (columns). Because both halves line up, the row of
``Im dI`` for a phase-node shares its index with the column of ``Re dV``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .linsolve import LinearSolver, LinearSolverConfig
from .newton import PowerFlowSolution, linear_step, new_timings
from .sparse import CooAssembler, SparseMatrix, spmv
from .threephase import PHASES, Bus3, PhaseIndex, ThreePhaseNetwork, build_ybus3

MIN_VOLTAGE = 1e-6


class NearZeroVoltageError(ArithmeticError):
    pass


@dataclass(frozen=True)
class CimOptions:
    tol_v: float = 1e-8
    max_iter: int = 50
    linear: LinearSolverConfig = field(default_factory=LinearSolverConfig)
    fallback_to_direct: bool = True

    def __post_init__(self):
        if not self.tol_v > 0:
            raise ValueError("tol_v must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class VoltageState3:
    """Complex phase-node voltages in :class:`PhaseIndex` order."""

    index: PhaseIndex
    v: np.ndarray

    def at(self, bus_id: int, phase: str) -> complex:
        return complex(self.v[self.index.compact(bus_id, phase)])

    @property
    def real(self) -> np.ndarray:
        return self.v.real

    @property
    def imag(self) -> np.ndarray:
        return self.v.imag

    def copy(self) -> "VoltageState3":
        return VoltageState3(self.index, self.v.copy())


@dataclass(frozen=True)
class AdjustingBlocks:
    """Load derivatives for one bus, each ``k x k`` over the present phases.

    ``a = dIm(I_sp)/dRe(V)``, ``b = dIm(I_sp)/dIm(V)``,
    ``c = dRe(I_sp)/dRe(V)``, ``d = dRe(I_sp)/dIm(V)``.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray


class CimLayout:
    """Stacked numbering of the non-source phase-nodes."""

    def __init__(self, net: ThreePhaseNetwork, index: PhaseIndex | None = None):
        self.index = PhaseIndex(net) if index is None else index
        pos = net.position()
        src = pos[net.source_bus]
        n_pn = self.index.size
        self.first = np.full(n_pn, -1, dtype=np.int64)  # Im(dI) row / Re(dV) column
        self.second = np.full(n_pn, -1, dtype=np.int64)  # Re(dI) row / Im(dV) column
        start = 0
        bus_of = self.index.bus
        pn = 0
        for k, b in enumerate(net.buses):
            m = len(b.phases)
            if k != src:
                self.first[pn : pn + m] = start + np.arange(m)
                self.second[pn : pn + m] = start + m + np.arange(m)
                start += 2 * m
            pn += m
        self.size = start
        self.free = np.flatnonzero(self.first >= 0)
        self.source = np.flatnonzero(bus_of == src)
        loads = np.zeros((n_pn, 6))
        for p in range(n_pn):
            b = net.buses[bus_of[p]]
            ld = b.load(PHASES[self.index.phase[p]])
            loads[p] = (ld.p_p, ld.p_i, ld.p_z, ld.q_p, ld.q_i, ld.q_z)
        self.zip = loads


@dataclass
class StackedVector:
    data: np.ndarray
    layout: CimLayout

    def inf_norm(self) -> float:
        return float(np.max(np.abs(self.data))) if self.data.size else 0.0

    def block(self, bus_id: int) -> np.ndarray:
        """The slice belonging to one bus: imaginary parts first, then real."""
        idx = self.layout.index
        pns = [idx.compact(bus_id, p) for p in PHASES if (bus_id, p) in idx._map]
        lo = self.layout.first[pns[0]]
        return self.data[lo : lo + 2 * len(pns)]


def _check_voltage(v):
    mag = np.abs(v)
    if np.any(mag < MIN_VOLTAGE):
        k = int(np.argmin(mag))
        raise NearZeroVoltageError(f"voltage magnitude {mag[k]:.3e} p.u. at phase-node {k}: diverging")
    return mag


def _specified(v: np.ndarray, zip_: np.ndarray) -> np.ndarray:
    """Specified injection current conj(S_sp / V), S_sp = -(P_l + j Q_l)."""
    m = _check_voltage(v)
    pl = zip_[:, 0] + zip_[:, 1] * m + zip_[:, 2] * m * m
    ql = zip_[:, 3] + zip_[:, 4] * m + zip_[:, 5] * m * m
    return np.conj(-(pl + 1j * ql) / v)


def _specified_derivatives(v: np.ndarray, zip_: np.ndarray):
    """Partials of Re/Im of the specified current w.r.t. Re/Im of the own voltage."""
    m = _check_voltage(v)
    e, f = v.real, v.imag
    p = -(zip_[:, 0] + zip_[:, 1] * m + zip_[:, 2] * m * m)
    q = -(zip_[:, 3] + zip_[:, 4] * m + zip_[:, 5] * m * m)
    dp = -(zip_[:, 1] + 2.0 * zip_[:, 2] * m)  # dP/d|V|
    dq = -(zip_[:, 4] + 2.0 * zip_[:, 5] * m)
    m2 = m * m
    # I_re = (P e + Q f) / m^2,  I_im = (P f - Q e) / m^2
    n_re = p * e + q * f
    n_im = p * f - q * e
    de_m, df_m = e / m, f / m
    dn_re_de = p + (dp * e + dq * f) * de_m
    dn_re_df = q + (dp * e + dq * f) * df_m
    dn_im_de = -q + (dp * f - dq * e) * de_m
    dn_im_df = p + (dp * f - dq * e) * df_m
    m4 = m2 * m2
    c = dn_re_de / m2 - 2.0 * e * n_re / m4
    d = dn_re_df / m2 - 2.0 * f * n_re / m4
    a = dn_im_de / m2 - 2.0 * e * n_im / m4
    b = dn_im_df / m2 - 2.0 * f * n_im / m4
    return a, b, c, d


def specified_current(bus: Bus3, phase: str, v: complex) -> complex:
    ld = bus.load(phase)
    z = np.array([[ld.p_p, ld.p_i, ld.p_z, ld.q_p, ld.q_i, ld.q_z]])
    return complex(_specified(np.array([v], dtype=complex), z)[0])


def calculated_current(ybus3: SparseMatrix, state, thread_count: int = 1) -> np.ndarray:
    v = state.v if isinstance(state, VoltageState3) else np.asarray(state)
    return spmv(ybus3, v, thread_count)


def adjusting_blocks(bus: Bus3, v_bus) -> AdjustingBlocks:
    """``v_bus`` holds the complex voltages of the bus's present phases, in phase order."""
    v_bus = np.asarray(v_bus, dtype=complex)
    z = np.array([[*(getattr(bus.load(p), k) for k in ("p_p", "p_i", "p_z", "q_p", "q_i", "q_z"))] for p in bus.phases])
    a, b, c, d = _specified_derivatives(v_bus, z)
    return AdjustingBlocks(np.diag(a), np.diag(b), np.diag(c), np.diag(d))


def _stack(layout: CimLayout, values: np.ndarray) -> np.ndarray:
    out = np.zeros(layout.size)
    fr = layout.free
    out[layout.first[fr]] = values[fr].imag
    out[layout.second[fr]] = values[fr].real
    return out


def current_mismatch(net: ThreePhaseNetwork, ybus3: SparseMatrix, state: VoltageState3, layout: CimLayout | None = None) -> StackedVector:
    layout = CimLayout(net, state.index) if layout is None else layout
    d_i = _specified(state.v, layout.zip) - spmv(ybus3, state.v)
    return StackedVector(_stack(layout, d_i), layout)


class _CimJacobian:
    def __init__(self, ybus3: SparseMatrix, layout: CimLayout):
        self.layout = layout
        r, c, y = ybus3.coo()
        keep = (layout.first[r] >= 0) & (layout.first[c] >= 0)
        self.keep = keep
        r, c = r[keep], c[keep]
        f1, f2 = layout.first, layout.second
        fr = layout.free
        rows = np.concatenate([f1[r], f1[r], f2[r], f2[r], f1[fr], f1[fr], f2[fr], f2[fr]])
        cols = np.concatenate([f1[c], f2[c], f1[c], f2[c], f1[fr], f2[fr], f1[fr], f2[fr]])
        self.asm = CooAssembler(rows, cols, layout.size, layout.size)
        y = y[keep]
        self.g, self.b = y.real, y.imag

    def build(self, v: np.ndarray) -> SparseMatrix:
        fr = self.layout.free
        a, b, c, d = _specified_derivatives(v[fr], self.layout.zip[fr])
        g, bb = self.g, self.b
        vals = np.concatenate([bb, g, g, -bb, -a, -b, -c, -d])
        return self.asm.assemble(vals)


def build_cim_jacobian(net: ThreePhaseNetwork, ybus3: SparseMatrix, state: VoltageState3) -> SparseMatrix:
    """``d(I_calc - I_sp)/dV`` in stacked form; source-bus rows and columns are dropped."""
    layout = CimLayout(net, state.index)
    return _CimJacobian(ybus3, layout).build(state.v)


def flat_start3(net: ThreePhaseNetwork, index: PhaseIndex) -> VoltageState3:
    return VoltageState3(index, index.nominal(net.source_vm))


def solve_cim(
    net: ThreePhaseNetwork,
    opts: CimOptions = CimOptions(),
    thread_count: int = 1,
    initial: VoltageState3 | None = None,
) -> PowerFlowSolution:
    timings = new_timings()
    t0 = time.perf_counter()
    index = PhaseIndex(net)
    layout = CimLayout(net, index)
    ybus3 = build_ybus3(net, index)
    jac = _CimJacobian(ybus3, layout)
    timings["jacobian_build"] += time.perf_counter() - t0
    state = flat_start3(net, index) if initial is None else initial.copy()
    state.v[layout.source] = index.nominal(net.source_vm)[layout.source]
    solver = LinearSolver(opts.linear, thread_count)
    fr = layout.free
    history: list[float] = []
    fallbacks = 0
    converged = False
    it = 0

    def mismatch():
        t = time.perf_counter()
        d_i = _specified(state.v, layout.zip) - spmv(ybus3, state.v, thread_count)
        out = _stack(layout, d_i)
        timings["mismatch_eval"] += time.perf_counter() - t
        return out

    while it < opts.max_iter:
        it += 1
        rhs = mismatch()
        history.append(float(np.max(np.abs(rhs))) if rhs.size else 0.0)
        if layout.size == 0:
            converged = True
            break
        t = time.perf_counter()
        J = jac.build(state.v)
        timings["jacobian_build"] += time.perf_counter() - t
        dv, fell_back = linear_step(solver, J, rhs, opts.fallback_to_direct, it, timings)
        fallbacks += fell_back
        state.v[fr] += dv[layout.first[fr]] + 1j * dv[layout.second[fr]]
        if float(np.max(np.abs(dv))) <= opts.tol_v:
            converged = True
            break
    rhs = mismatch()
    history.append(float(np.max(np.abs(rhs))) if rhs.size else 0.0)
    return PowerFlowSolution(state, it, history, converged, timings, fallbacks, opts.linear.kind)
