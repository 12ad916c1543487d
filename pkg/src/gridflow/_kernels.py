"""Compiled kernels behind the sparse and linear-solver modules.

Everything here works on raw CSR/CSC arrays. Parallel kernels split work into
contiguous blocks given by a ``bounds`` array (block ``b`` owns rows
``bounds[b]:bounds[b + 1]``); each output element is written by exactly one
block, and reductions combine per-block partial sums in block order.
"""
import numba
import numpy as np
from numba import njit, prange

# omp tolerates concurrent callers; the TBB build shipped here is too old
if numba.config.THREADING_LAYER == "default":
    numba.config.THREADING_LAYER = "omp"

STATUS_CONVERGED = 0
STATUS_MAXITER = 1
STATUS_BREAKDOWN = 2

BREAKDOWN_EPS = 1e-30


# ---------------------------------------------------------------------------
# block-parallel vector kernels
# ---------------------------------------------------------------------------


@njit(parallel=True, cache=True)
def spmv_blocks(indptr, indices, data, x, y, bounds):
    nb = bounds.shape[0] - 1
    for b in prange(nb):
        for i in range(bounds[b], bounds[b + 1]):
            acc = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                acc += data[p] * x[indices[p]]
            y[i] = acc


@njit(parallel=True, cache=True)
def _dot_partials(a, b, bounds, partial):
    nb = bounds.shape[0] - 1
    for blk in prange(nb):
        s = 0.0
        for i in range(bounds[blk], bounds[blk + 1]):
            s += a[i] * b[i]
        partial[blk] = s


@njit(cache=True)
def block_dot(a, b, bounds, partial):
    _dot_partials(a, b, bounds, partial)
    total = 0.0
    for blk in range(partial.shape[0]):
        total += partial[blk]
    return total


@njit(parallel=True, cache=True)
def _p_update(p, r, v, beta, omega, bounds):
    # p = r + beta * (p - omega * v)
    nb = bounds.shape[0] - 1
    for blk in prange(nb):
        for i in range(bounds[blk], bounds[blk + 1]):
            p[i] = r[i] + beta * (p[i] - omega * v[i])


@njit(parallel=True, cache=True)
def _scale(out, dinv, src, bounds):
    nb = bounds.shape[0] - 1
    for blk in prange(nb):
        for i in range(bounds[blk], bounds[blk + 1]):
            out[i] = dinv[i] * src[i]


@njit(parallel=True, cache=True)
def _axpy_into(out, a, x, y, bounds):
    # out = y + a * x
    nb = bounds.shape[0] - 1
    for blk in prange(nb):
        for i in range(bounds[blk], bounds[blk + 1]):
            out[i] = y[i] + a * x[i]


@njit(parallel=True, cache=True)
def _x_update(x, alpha, ph, omega, sh, bounds):
    nb = bounds.shape[0] - 1
    for blk in prange(nb):
        for i in range(bounds[blk], bounds[blk + 1]):
            x[i] += alpha * ph[i] + omega * sh[i]


@njit(parallel=True, cache=True)
def _residual(r, b, ax, bounds):
    nb = bounds.shape[0] - 1
    for blk in prange(nb):
        for i in range(bounds[blk], bounds[blk + 1]):
            r[i] = b[i] - ax[i]


@njit(cache=True)
def bicgstab_kernel(indptr, indices, data, b, x, dinv, tol, max_iter, bounds):
    """Right-preconditioned BiCGSTAB; ``x`` holds the initial guess and is updated.

    Returns ``(status, iterations, residual_norm)`` with the residual
    recomputed from scratch as ``b - A x``.
    """
    n = b.shape[0]
    partial = np.zeros(bounds.shape[0] - 1)
    r = np.empty(n)
    ax = np.empty(n)
    bnorm = np.sqrt(block_dot(b, b, bounds, partial))
    if bnorm == 0.0:
        x[:] = 0.0
        return STATUS_CONVERGED, 0, 0.0
    target = tol * bnorm

    spmv_blocks(indptr, indices, data, x, ax, bounds)
    _residual(r, b, ax, bounds)
    rnorm = np.sqrt(block_dot(r, r, bounds, partial))
    if rnorm <= target:
        return STATUS_CONVERGED, 0, rnorm

    rhat = r.copy()
    p = np.zeros(n)
    v = np.zeros(n)
    ph = np.empty(n)
    s = np.empty(n)
    sh = np.zeros(n)  # read with weight 0 on the early exit, so it must be finite
    t = np.empty(n)
    rho = 1.0
    alpha = 1.0
    omega = 1.0
    it = 0
    while it < max_iter:
        it += 1
        rho_new = block_dot(rhat, r, bounds, partial)
        if abs(rho_new) < BREAKDOWN_EPS:
            return STATUS_BREAKDOWN, it, rnorm
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        _p_update(p, r, v, beta, omega, bounds)
        _scale(ph, dinv, p, bounds)
        spmv_blocks(indptr, indices, data, ph, v, bounds)
        denom = block_dot(rhat, v, bounds, partial)
        if abs(denom) < BREAKDOWN_EPS:
            return STATUS_BREAKDOWN, it, rnorm
        alpha = rho / denom
        _axpy_into(s, -alpha, v, r, bounds)
        snorm = np.sqrt(block_dot(s, s, bounds, partial))
        if snorm <= target:
            _x_update(x, alpha, ph, 0.0, sh, bounds)
            omega_done = True
        else:
            omega_done = False
        if not omega_done:
            _scale(sh, dinv, s, bounds)
            spmv_blocks(indptr, indices, data, sh, t, bounds)
            tt = block_dot(t, t, bounds, partial)
            if tt < BREAKDOWN_EPS:
                return STATUS_BREAKDOWN, it, rnorm
            omega = block_dot(t, s, bounds, partial) / tt
            if abs(omega) < BREAKDOWN_EPS:
                return STATUS_BREAKDOWN, it, rnorm
            _x_update(x, alpha, ph, omega, sh, bounds)
            _axpy_into(r, -omega, t, s, bounds)
            rnorm = np.sqrt(block_dot(r, r, bounds, partial))
            if not np.isfinite(rnorm):
                return STATUS_BREAKDOWN, it, rnorm
        if omega_done or rnorm <= target:
            # the recursive residual drifts; confirm against the true one
            spmv_blocks(indptr, indices, data, x, ax, bounds)
            _residual(r, b, ax, bounds)
            rnorm = np.sqrt(block_dot(r, r, bounds, partial))
            if rnorm <= target:
                return STATUS_CONVERGED, it, rnorm
            # restart from the current iterate
            rhat[:] = r
            p[:] = 0.0
            v[:] = 0.0
            rho = 1.0
            alpha = 1.0
            omega = 1.0
    spmv_blocks(indptr, indices, data, x, ax, bounds)
    _residual(r, b, ax, bounds)
    rnorm = np.sqrt(block_dot(r, r, bounds, partial))
    return STATUS_MAXITER, it, rnorm


# ---------------------------------------------------------------------------
# left-looking sparse LU (Gilbert-Peierls) with threshold partial pivoting
# ---------------------------------------------------------------------------


@njit(cache=True)
def _grow(arr, need):
    if need <= arr.shape[0]:
        return arr
    cap = max(need, 2 * arr.shape[0])
    out = np.empty(cap, dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


@njit(cache=True)
def _reach(Lp, Li, Ap, Ai, k, pinv, xi, stack, pstack, mark, stamp):
    """Nodes reachable from the pattern of column ``k`` of A through the graph
    of L, in topological order in ``xi[top:]``."""
    n = pinv.shape[0]
    top = n
    for p in range(Ap[k], Ap[k + 1]):
        j0 = Ai[p]
        if mark[j0] == stamp:
            continue
        head = 0
        stack[0] = j0
        while head >= 0:
            j = stack[head]
            jnew = pinv[j]
            if mark[j] != stamp:
                mark[j] = stamp
                pstack[head] = 0 if jnew < 0 else Lp[jnew]
            done = True
            pend = 0 if jnew < 0 else Lp[jnew + 1]
            for q in range(pstack[head], pend):
                i = Li[q]
                if mark[i] == stamp:
                    continue
                pstack[head] = q + 1
                head += 1
                stack[head] = i
                done = False
                break
            if done:
                head -= 1
                top -= 1
                xi[top] = j
    return top


@njit(cache=True)
def lu_kernel(Ap, Ai, Ax, q, tol):
    """Factor ``A[:, q]`` given in CSC form (``Ap, Ai, Ax`` already column-permuted).

    Returns ``(status, Lp, Li, Lx, Up, Ui, Ux, pinv)``; ``status`` is -1 on
    success or the failing column index. L and U are CSC; L has its unit
    diagonal first in each column and U has its pivot last.
    """
    n = Ap.shape[0] - 1
    nnz_a = Ap[n]
    cap = 4 * nnz_a + n
    Lp = np.zeros(n + 1, dtype=np.int64)
    Up = np.zeros(n + 1, dtype=np.int64)
    Li = np.empty(cap, dtype=np.int64)
    Lx = np.empty(cap, dtype=Ax.dtype)
    Ui = np.empty(cap, dtype=np.int64)
    Ux = np.empty(cap, dtype=Ax.dtype)
    pinv = -np.ones(n, dtype=np.int64)
    x = np.zeros(n, dtype=Ax.dtype)
    xi = np.empty(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    pstack = np.empty(n, dtype=np.int64)
    mark = -np.ones(n, dtype=np.int64)
    lnz = 0
    unz = 0
    for k in range(n):
        Lp[k] = lnz
        Up[k] = unz
        Li = _grow(Li, lnz + n)
        Lx = _grow(Lx, lnz + n)
        Ui = _grow(Ui, unz + n)
        Ux = _grow(Ux, unz + n)

        # sparse triangular solve x = L \ A[:, k]
        top = _reach(Lp, Li, Ap, Ai, k, pinv, xi, stack, pstack, mark, k)
        for p in range(top, n):
            x[xi[p]] = 0.0
        for p in range(Ap[k], Ap[k + 1]):
            x[Ai[p]] = Ax[p]
        for px in range(top, n):
            j = xi[px]
            J = pinv[j]
            if J < 0:
                continue
            xj = x[j]
            for p in range(Lp[J] + 1, Lp[J + 1]):
                x[Li[p]] -= Lx[p] * xj

        ipiv = -1
        amax = -1.0
        for p in range(top, n):
            i = xi[p]
            if pinv[i] < 0:
                t = abs(x[i])
                if t > amax:
                    amax = t
                    ipiv = i
            else:
                Ui[unz] = pinv[i]
                Ux[unz] = x[i]
                unz += 1
        if ipiv == -1 or amax <= 0.0:
            return k, Lp, Li, Lx, Up, Ui, Ux, pinv
        diag = q[k]
        if pinv[diag] < 0 and abs(x[diag]) >= amax * tol and x[diag] != 0.0:
            ipiv = diag
        pivot = x[ipiv]
        Ui[unz] = k
        Ux[unz] = pivot
        unz += 1
        pinv[ipiv] = k
        Li[lnz] = ipiv
        Lx[lnz] = 1.0
        lnz += 1
        for p in range(top, n):
            i = xi[p]
            if pinv[i] < 0:
                Li[lnz] = i
                Lx[lnz] = x[i] / pivot
                lnz += 1
            x[i] = 0.0
    Lp[n] = lnz
    Up[n] = unz
    for p in range(lnz):
        Li[p] = pinv[Li[p]]
    return -1, Lp, Li[:lnz], Lx[:lnz], Up, Ui[:unz], Ux[:unz], pinv


@njit(cache=True)
def lu_solve_kernel(Lp, Li, Lx, Up, Ui, Ux, pinv, q, b):
    n = b.shape[0]
    y = np.empty(n, dtype=Lx.dtype)
    for i in range(n):
        y[pinv[i]] = b[i]
    for j in range(n):
        yj = y[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            y[Li[p]] -= Lx[p] * yj
    for j in range(n - 1, -1, -1):
        y[j] /= Ux[Up[j + 1] - 1]
        yj = y[j]
        for p in range(Up[j], Up[j + 1] - 1):
            y[Ui[p]] -= Ux[p] * yj
    x = np.empty_like(y)
    for k in range(n):
        x[q[k]] = y[k]
    return x
