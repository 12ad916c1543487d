"""Polar-form Newton-Raphson power flow for balanced networks."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .linsolve import (
    KrylovBreakdownError,
    KrylovNotConvergedError,
    LinearSolver,
    LinearSolverConfig,
    SingularMatrixError,
)
from .network import SinglePhaseNetwork, VoltageState, build_ybus
from .sparse import CooAssembler, SparseMatrix, spmv


class NewtonSingularError(ArithmeticError):
    def __init__(self, iteration: int, cause: SingularMatrixError):
        self.iteration = iteration
        self.column = cause.column
        super().__init__(f"singular Jacobian at Newton iteration {iteration} (column {cause.column})")


@dataclass(frozen=True)
class NewtonOptions:
    tol_angle: float = 1e-8
    tol_vm: float = 1e-8
    max_iter: int = 30
    linear: LinearSolverConfig = field(default_factory=LinearSolverConfig)
    flat_start: bool = True
    fallback_to_direct: bool = True

    def __post_init__(self):
        if not (self.tol_angle > 0 and self.tol_vm > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class PowerFlowSolution:
    """Result of either Newton solver.

    ``mismatch_history[k]`` is the mismatch infinity-norm seen at the start
    of iteration ``k + 1``; the last entry is re-evaluated at the returned
    state, so the list has ``iterations + 1`` entries.
    """

    state: object
    iterations: int
    mismatch_history: list[float]
    converged: bool
    timings: dict[str, float]
    fallbacks: int = 0
    solver: str = "direct"

    @property
    def solve_time(self) -> float:
        return self.timings["linear_solve"]

    @property
    def other_time(self) -> float:
        return self.timings["jacobian_build"] + self.timings["mismatch_eval"]


@dataclass
class MismatchVector:
    dp: np.ndarray
    dq: np.ndarray
    p_buses: np.ndarray  # bus positions owning each dp row
    q_buses: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.dp, self.dq])

    def inf_norm(self) -> float:
        s = self.stacked()
        return float(np.max(np.abs(s))) if s.size else 0.0


def new_timings() -> dict[str, float]:
    """``linear_solve`` covers every inner solve; ``krylov_solve`` is the BiCGSTAB share of it."""
    return {"jacobian_build": 0.0, "linear_solve": 0.0, "krylov_solve": 0.0, "mismatch_eval": 0.0}


def linear_step(solver: LinearSolver, J: SparseMatrix, rhs, fallback: bool, iteration: int, timings) -> tuple[np.ndarray, bool]:
    """One inner solve for a Newton driver, retrying with LU when the Krylov path fails."""
    t = time.perf_counter()
    fell_back = False
    try:
        try:
            dx = solver.solve(J, rhs)
        finally:
            if solver.cfg.kind == "krylov":
                timings["krylov_solve"] += time.perf_counter() - t
    except (KrylovNotConvergedError, KrylovBreakdownError):
        if not fallback:
            raise
        fell_back = True
        try:
            dx = solver.solve(J, rhs, kind="direct")
        except SingularMatrixError as exc:
            raise NewtonSingularError(iteration, exc) from exc
    except SingularMatrixError as exc:
        raise NewtonSingularError(iteration, exc) from exc
    timings["linear_solve"] += time.perf_counter() - t
    return dx, fell_back


def calc_pq(ybus: SparseMatrix, state: VoltageState, thread_count: int = 1):
    """Injected P and Q at every bus, from S = V conj(Y V)."""
    v = state.complex
    s = v * np.conj(spmv(ybus, v, thread_count))
    return s.real, s.imag


class _Indexing:
    """Equation/unknown numbering: angles of PV+PQ buses, then magnitudes of PQ buses."""

    def __init__(self, net: SinglePhaseNetwork):
        kinds = net.kinds()
        n = net.n_buses
        self.pvpq = np.flatnonzero(kinds != "slack")
        self.pq = np.flatnonzero(kinds == "pq")
        self.ang = np.full(n, -1, dtype=np.int64)
        self.ang[self.pvpq] = np.arange(self.pvpq.size)
        self.mag = np.full(n, -1, dtype=np.int64)
        self.mag[self.pq] = self.pvpq.size + np.arange(self.pq.size)
        self.size = self.pvpq.size + self.pq.size
        self.p_spec = np.array([b.p_gen - b.p_load for b in net.buses])
        self.q_spec = np.array([-b.q_load for b in net.buses])
        self.p_spec[kinds == "slack"] = 0.0


def power_mismatch(net: SinglePhaseNetwork, state: VoltageState, ybus: SparseMatrix | None = None) -> MismatchVector:
    ybus = build_ybus(net) if ybus is None else ybus
    ix = _Indexing(net)
    p, q = calc_pq(ybus, state)
    return MismatchVector(
        dp=ix.p_spec[ix.pvpq] - p[ix.pvpq],
        dq=ix.q_spec[ix.pq] - q[ix.pq],
        p_buses=ix.pvpq,
        q_buses=ix.pq,
    )


class _JacobianBuilder:
    def __init__(self, ybus: SparseMatrix, ix: _Indexing):
        self.ybus = ybus
        self.ix = ix
        r, c, _ = ybus.coo()
        n = ybus.n_rows
        diag = np.arange(n)
        # dS/d(angle) and dS/d|V| share positions: Y entries plus the diagonal terms
        self.r = np.concatenate([r, diag])
        self.c = np.concatenate([c, diag])
        blocks = []
        for row_map, col_map in ((ix.ang, ix.ang), (ix.ang, ix.mag), (ix.mag, ix.ang), (ix.mag, ix.mag)):
            rr, cc = row_map[self.r], col_map[self.c]
            keep = (rr >= 0) & (cc >= 0)
            blocks.append((keep, rr[keep], cc[keep]))
        self.blocks = blocks
        rows = np.concatenate([b[1] for b in blocks])
        cols = np.concatenate([b[2] for b in blocks])
        self.asm = CooAssembler(rows, cols, ix.size, ix.size)

    def build(self, state: VoltageState) -> SparseMatrix:
        r, c, y = self.ybus.coo()
        v = state.complex
        vnorm = np.exp(1j * state.angle)
        i_bus = spmv(self.ybus, v)
        # dS_i/d(angle_j) = -j V_i conj(Y_ij V_j) + [i=j] j V_i conj(I_i)
        ds_da = np.concatenate([-1j * v[r] * np.conj(y * v[c]), 1j * v * np.conj(i_bus)])
        # dS_i/d|V_j| = V_i conj(Y_ij Vhat_j) + [i=j] conj(I_i) Vhat_i
        ds_dm = np.concatenate([v[r] * np.conj(y * vnorm[c]), np.conj(i_bus) * vnorm])
        parts = (ds_da.real, ds_dm.real, ds_da.imag, ds_dm.imag)
        vals = np.concatenate([part[keep] for part, (keep, _, _) in zip(parts, self.blocks)])
        return self.asm.assemble(vals)


def build_jacobian(net: SinglePhaseNetwork, state: VoltageState, ybus: SparseMatrix | None = None) -> SparseMatrix:
    """Jacobian of (P, Q) with respect to (angle, |V|), restricted by bus role."""
    ybus = build_ybus(net) if ybus is None else ybus
    return _JacobianBuilder(ybus, _Indexing(net)).build(state)


def flat_start(net: SinglePhaseNetwork) -> VoltageState:
    vm = np.array([1.0 if b.kind == "pq" else b.v_setpoint for b in net.buses])
    return VoltageState(vm, np.zeros(net.n_buses))


def solve_nr(
    net: SinglePhaseNetwork,
    opts: NewtonOptions = NewtonOptions(),
    thread_count: int = 1,
    initial: VoltageState | None = None,
) -> PowerFlowSolution:
    timings = new_timings()
    t0 = time.perf_counter()
    ybus = build_ybus(net)
    ix = _Indexing(net)
    jac = _JacobianBuilder(ybus, ix)
    timings["jacobian_build"] += time.perf_counter() - t0
    state = flat_start(net) if (opts.flat_start or initial is None) else initial.copy()
    solver = LinearSolver(opts.linear, thread_count)
    history: list[float] = []
    fallbacks = 0
    converged = False
    it = 0

    def mismatch():
        t = time.perf_counter()
        p, q = calc_pq(ybus, state, thread_count)
        f = np.concatenate([ix.p_spec[ix.pvpq] - p[ix.pvpq], ix.q_spec[ix.pq] - q[ix.pq]])
        timings["mismatch_eval"] += time.perf_counter() - t
        return f

    while it < opts.max_iter:
        it += 1
        f = mismatch()
        history.append(float(np.max(np.abs(f))) if f.size else 0.0)
        if ix.size == 0:
            converged = True
            break
        t = time.perf_counter()
        J = jac.build(state)
        timings["jacobian_build"] += time.perf_counter() - t
        dx, fell_back = linear_step(solver, J, f, opts.fallback_to_direct, it, timings)
        fallbacks += fell_back
        d_ang = dx[: ix.pvpq.size]
        d_vm = dx[ix.pvpq.size :]
        state.angle[ix.pvpq] += d_ang
        state.magnitude[ix.pq] += d_vm
        step_a = float(np.max(np.abs(d_ang))) if d_ang.size else 0.0
        step_v = float(np.max(np.abs(d_vm))) if d_vm.size else 0.0
        if step_a <= opts.tol_angle and step_v <= opts.tol_vm:
            converged = True
            break
    f = mismatch()
    history.append(float(np.max(np.abs(f))) if f.size else 0.0)
    return PowerFlowSolution(state, it, history, converged, timings, fallbacks, opts.linear.kind)
