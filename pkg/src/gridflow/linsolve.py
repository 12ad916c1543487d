"""Inner linear solvers: sparse direct LU and block-parallel BiCGSTAB."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import _kernels
from .ordering import amd_order, rcm_order
from .sparse import (
    Permutation,
    SparseMatrix,
    block_bounds,
    permute,
    worker_threads,
)


class SingularMatrixError(ArithmeticError):
    def __init__(self, column: int, message: str | None = None):
        self.column = column
        super().__init__(message or f"no acceptable pivot in column {column}: matrix is singular")


class KrylovBreakdownError(ArithmeticError):
    pass


class KrylovNotConvergedError(ArithmeticError):
    """Raised by :func:`solve_linear` so a Newton driver can retry with the direct path."""

    def __init__(self, result: "KrylovResult"):
        self.result = result
        super().__init__(
            f"BiCGSTAB stopped after {result.iterations} iterations "
            f"with residual {result.residual_norm:.3e}"
        )


@dataclass(frozen=True)
class LinearSolverConfig:
    kind: Literal["direct", "krylov"] = "direct"
    tol: float = 1e-10
    max_iter: int = 1000
    preconditioner: Literal["none", "jacobi"] = "jacobi"
    pivot_threshold: float = 1.0

    def __post_init__(self):
        if self.kind not in ("direct", "krylov"):
            raise ValueError(f"unknown solver kind {self.kind!r}")
        if self.preconditioner not in ("none", "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.pivot_threshold <= 1:
            raise ValueError("pivot_threshold must lie in (0, 1]")


@dataclass(frozen=True)
class LUFactors:
    L: SparseMatrix
    U: SparseMatrix
    row_perm: Permutation
    col_perm: Permutation
    _csc: tuple = field(repr=False, compare=False, default=())

    @property
    def n(self) -> int:
        return self.L.n_rows


@dataclass(frozen=True)
class KrylovResult:
    x: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool


def _csc_arrays(A: SparseMatrix):
    """CSC arrays of A (the CSR arrays of its transpose)."""
    At = A.transpose()
    return At.row_offsets, At.col_indices, At.values


def lu_factorize(
    A: SparseMatrix, col_perm: Permutation | None = None, pivot_threshold: float = 1.0
) -> LUFactors:
    """Left-looking (Gilbert-Peierls) LU of ``A[:, q]`` with threshold partial pivoting.

    Produces ``P A Q = L U`` where ``P = row_perm`` (from pivoting) and
    ``Q = col_perm``. Raises :class:`SingularMatrixError` naming the
    original column that had no usable pivot.
    """
    if A.n_rows != A.n_cols:
        raise ValueError(f"LU needs a square matrix, got {A.shape}")
    n = A.n_rows
    if col_perm is None:
        col_perm = Permutation.identity(n)
    if len(col_perm) != n:
        raise ValueError("column permutation size does not match matrix")
    values = A.values
    if not np.iscomplexobj(values):
        values = values.astype(np.float64, copy=False)
    Ap, Ai, Ax = _csc_arrays(A.with_values(values))
    # gather columns in the order q[0], q[1], ...
    q = col_perm.inverse
    counts = np.diff(Ap)[q]
    Qp = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=Qp[1:])
    take = np.arange(Qp[-1], dtype=np.int64) + np.repeat(Ap[q] - Qp[:-1], counts)
    status, Lp, Li, Lx, Up, Ui, Ux, pinv = _kernels.lu_kernel(
        Qp, Ai[take], Ax[take], q, float(pivot_threshold)
    )
    if status >= 0:
        raise SingularMatrixError(int(q[status]))
    row_perm = Permutation(pinv)
    # CSC of L is the CSR of L^T
    L = SparseMatrix(n, n, Lp, Li, Lx).transpose()
    U = SparseMatrix(n, n, Up, Ui, Ux).transpose()
    diag_u = Ux[Up[1:] - 1]
    if np.any(diag_u == 0):
        raise SingularMatrixError(int(q[int(np.flatnonzero(diag_u == 0)[0])]))
    return LUFactors(L, U, row_perm, col_perm, (Lp, Li, Lx, Up, Ui, Ux, pinv, q))


def lu_solve(f: LUFactors, b) -> np.ndarray:
    b = np.asarray(b)
    if b.shape != (f.n,):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({f.n},)")
    Lp, Li, Lx, Up, Ui, Ux, pinv, q = f._csc
    return _kernels.lu_solve_kernel(Lp, Li, Lx, Up, Ui, Ux, pinv, q, b.astype(Lx.dtype))


def jacobi_inverse(A: SparseMatrix) -> np.ndarray:
    d = A.diagonal().astype(float)
    out = np.ones_like(d)
    nz = d != 0
    out[nz] = 1.0 / d[nz]
    return out


def bicgstab(
    A: SparseMatrix,
    b,
    cfg: LinearSolverConfig = LinearSolverConfig(kind="krylov"),
    thread_count: int = 1,
    x0=None,
) -> KrylovResult:
    """BiCGSTAB with every vector kernel split over ``thread_count`` contiguous blocks.

    Raises :class:`KrylovBreakdownError` when ``rho`` or ``omega`` collapse.
    Running out of iterations is reported through ``converged=False``.
    """
    if A.n_rows != A.n_cols:
        raise ValueError(f"BiCGSTAB needs a square matrix, got {A.shape}")
    if np.iscomplexobj(A.values):
        raise TypeError("bicgstab works on real matrices; stack complex systems first")
    b = np.ascontiguousarray(b, dtype=np.float64)
    if b.shape != (A.n_rows,):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({A.n_rows},)")
    n = A.n_rows
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    dinv = jacobi_inverse(A) if cfg.preconditioner == "jacobi" else np.ones(n)
    bounds = block_bounds(n, thread_count)
    data = A.values.astype(np.float64, copy=False)
    # work on b / |b| so the breakdown thresholds do not depend on the scale of b
    scale = float(np.linalg.norm(b))
    if scale == 0.0:
        return KrylovResult(np.zeros(n), 0, 0.0, True)
    b = b / scale
    x /= scale
    with worker_threads(thread_count):
        status, iters, rnorm = _kernels.bicgstab_kernel(
            A.row_offsets, A.col_indices, data, b, x, dinv, float(cfg.tol), int(cfg.max_iter), bounds
        )
    if status == _kernels.STATUS_BREAKDOWN:
        raise KrylovBreakdownError(f"BiCGSTAB breakdown at iteration {iters} (residual {rnorm * scale:.3e})")
    return KrylovResult(x * scale, int(iters), float(rnorm) * scale, status == _kernels.STATUS_CONVERGED)


class LinearSolver:
    """Solver for a sequence of matrices sharing one sparsity pattern.

    The ordering (AMD for the direct path, RCM for the Krylov path) is
    computed on the first call and reused; Newton loops hold one of these
    per solve.
    """

    def __init__(self, cfg: LinearSolverConfig, thread_count: int = 1):
        self.cfg = cfg
        self.thread_count = thread_count
        self._amd: Permutation | None = None
        self._rcm: Permutation | None = None
        self._rcm_structure: SparseMatrix | None = None
        self._rcm_take: np.ndarray | None = None
        self.last_krylov: KrylovResult | None = None

    def solve(self, A: SparseMatrix, b, kind: str | None = None) -> np.ndarray:
        kind = kind or self.cfg.kind
        if kind == "direct":
            if self._amd is None or len(self._amd) != A.n_rows:
                self._amd = amd_order(A.pattern)
            f = lu_factorize(A, self._amd, self.cfg.pivot_threshold)
            return lu_solve(f, b)
        if self._rcm is None or len(self._rcm) != A.n_rows:
            self._rcm = rcm_order(A.pattern)
            # permute entry positions once; later calls only gather values
            tagged = permute(A.with_values(np.arange(A.nnz, dtype=float)), self._rcm, self._rcm)
            self._rcm_structure = tagged
            self._rcm_take = tagged.values.astype(np.int64)
        p = self._rcm
        Ap = self._rcm_structure.with_values(A.values[self._rcm_take])
        res = bicgstab(Ap, p.apply(b), self.cfg, self.thread_count)
        self.last_krylov = res
        if not res.converged:
            raise KrylovNotConvergedError(res)
        return p.unapply(res.x)


def solve_linear(
    A: SparseMatrix, b, cfg: LinearSolverConfig = LinearSolverConfig(), thread_count: int = 1
) -> np.ndarray:
    """One-shot dispatch; the answer is always in the caller's ordering."""
    return LinearSolver(cfg, thread_count).solve(A, b)
