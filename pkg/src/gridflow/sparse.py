"""Compressed-row sparse matrices, permutations and the row-block parallel SpMV."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np

from . import _kernels


class SparseFormatError(ValueError):
    """Raised when triplets or arrays do not describe a valid sparse matrix."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SparsityPattern:
    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    def row(self, i: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[i] : self.row_offsets[i + 1]]

    def symmetrized(self) -> "SparsityPattern":
        """Pattern of ``A + A^T`` without the diagonal."""
        if self.n_rows != self.n_cols:
            raise SparseFormatError("pattern must be square")
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))
        cols = self.col_indices
        off = rows != cols
        r = np.concatenate([rows[off], cols[off]])
        c = np.concatenate([cols[off], rows[off]])
        return _pattern_from_coo(r, c, self.n_rows, self.n_cols)

    def neighbor_sets(self) -> list[set[int]]:
        """Symmetrized off-diagonal adjacency as a list of sets."""
        sym = self.symmetrized()
        ro, ci = sym.row_offsets, sym.col_indices
        return [set(ci[ro[i] : ro[i + 1]].tolist()) for i in range(sym.n_rows)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparsityPattern):
            return NotImplemented
        return (
            self.n_rows == other.n_rows
            and self.n_cols == other.n_cols
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
        )


def _pattern_from_coo(rows, cols, n_rows, n_cols) -> SparsityPattern:
    key = np.unique(np.asarray(rows, dtype=np.int64) * n_cols + np.asarray(cols, dtype=np.int64))
    r = key // max(n_cols, 1)
    c = key % max(n_cols, 1)
    offsets = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=n_rows), out=offsets[1:])
    return SparsityPattern(n_rows, n_cols, _frozen(offsets), _frozen(c.astype(np.int64)))


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """CSR matrix. Arrays are made read-only on construction.

    Explicitly stored zeros are kept: Jacobians keep a fixed structure across
    Newton iterations so orderings can be reused.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_offsets", _frozen(np.asarray(self.row_offsets, dtype=np.int64)))
        object.__setattr__(self, "col_indices", _frozen(np.asarray(self.col_indices, dtype=np.int64)))
        object.__setattr__(self, "values", _frozen(np.asarray(self.values)))
        if self.row_offsets.shape != (self.n_rows + 1,):
            raise SparseFormatError("row_offsets must have length n_rows + 1")
        if self.col_indices.shape != self.values.shape:
            raise SparseFormatError("col_indices and values differ in length")

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def pattern(self) -> SparsityPattern:
        return SparsityPattern(self.n_rows, self.n_cols, self.row_offsets, self.col_indices)

    def check(self) -> None:
        """Raise SparseFormatError if a structural invariant is violated."""
        ro, ci = self.row_offsets, self.col_indices
        if ro[0] != 0 or ro[-1] != ci.shape[0]:
            raise SparseFormatError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(ro) < 0):
            raise SparseFormatError("row_offsets must be non-decreasing")
        if ci.size and (ci.min() < 0 or ci.max() >= self.n_cols):
            raise SparseFormatError("column index out of range")
        rows = np.repeat(np.arange(self.n_rows), np.diff(ro))
        same_row = rows[1:] == rows[:-1]
        if np.any(same_row & (ci[1:] <= ci[:-1])):
            raise SparseFormatError("column indices must be strictly increasing within a row")

    def coo(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_offsets))
        return rows, self.col_indices, self.values

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols), dtype=self.values.dtype)
        r, c, v = self.coo()
        out[r, c] = v
        return out

    def diagonal(self) -> np.ndarray:
        r, c, v = self.coo()
        d = np.zeros(min(self.n_rows, self.n_cols), dtype=self.values.dtype)
        on = r == c
        d[r[on]] = v[on]
        return d

    def transpose(self) -> "SparseMatrix":
        r, c, v = self.coo()
        order = np.lexsort((r, c))
        offsets = np.zeros(self.n_cols + 1, dtype=np.int64)
        np.cumsum(np.bincount(c, minlength=self.n_cols), out=offsets[1:])
        return SparseMatrix(self.n_cols, self.n_rows, offsets, r[order], v[order])

    def with_values(self, values: np.ndarray) -> "SparseMatrix":
        """Same structure, new values (used to refresh Jacobians in place of rebuilding)."""
        return SparseMatrix(self.n_rows, self.n_cols, self.row_offsets, self.col_indices, values)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.nnz else 0.0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
            and np.array_equal(self.values, other.values)
        )

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        a = np.asarray(a)
        r, c = np.nonzero(a)
        return matrix_from_coo(r, c, a[r, c], a.shape[0], a.shape[1])

    @classmethod
    def identity(cls, n: int, dtype=float) -> "SparseMatrix":
        idx = np.arange(n)
        return matrix_from_coo(idx, idx, np.ones(n, dtype=dtype), n, n)


class CooAssembler:
    """Assembles CSR matrices from triplets whose positions never change.

    The sort and duplicate detection run once; :meth:`assemble` only sums
    values. Newton loops use this to refresh Jacobians cheaply.
    """

    def __init__(self, rows, cols, n_rows: int, n_cols: int):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.size:
            bad = (rows < 0) | (rows >= n_rows) | (cols < 0) | (cols >= n_cols)
            if np.any(bad):
                k = int(np.flatnonzero(bad)[0])
                raise SparseFormatError(
                    f"entry {k} at ({rows[k]}, {cols[k]}) is outside a {n_rows}x{n_cols} matrix"
                )
        key = rows * n_cols + cols
        uniq, self._inv = np.unique(key, return_inverse=True)
        self._m = uniq.size
        r = uniq // max(n_cols, 1)
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=n_rows), out=offsets[1:])
        self._offsets = _frozen(offsets)
        self._cols = _frozen(uniq % max(n_cols, 1))
        self.n_rows, self.n_cols = n_rows, n_cols

    def assemble(self, values) -> SparseMatrix:
        values = np.asarray(values)
        if np.iscomplexobj(values):
            vals = np.bincount(self._inv, weights=values.real, minlength=self._m) + 1j * np.bincount(
                self._inv, weights=values.imag, minlength=self._m
            )
        else:
            vals = np.bincount(self._inv, weights=values.astype(float), minlength=self._m)
        return SparseMatrix(self.n_rows, self.n_cols, self._offsets, self._cols, vals)


def matrix_from_coo(rows, cols, values, n_rows: int, n_cols: int) -> SparseMatrix:
    """Vectorised triplet assembly: sorts by (row, col) and sums duplicates."""
    return CooAssembler(rows, cols, n_rows, n_cols).assemble(values)


def matrix_from_triplets(
    entries: Iterable[tuple[int, int, complex]], n_rows: int, n_cols: int
) -> SparseMatrix:
    entries = list(entries)
    for k, (i, j, _) in enumerate(entries):
        if not (0 <= i < n_rows and 0 <= j < n_cols):
            raise SparseFormatError(
                f"entry {k} ({i}, {j}) is outside a {n_rows}x{n_cols} matrix"
            )
    if not entries:
        return SparseMatrix(n_rows, n_cols, np.zeros(n_rows + 1, dtype=np.int64), [], np.zeros(0))
    rows, cols, vals = zip(*entries)
    return matrix_from_coo(rows, cols, np.asarray(vals), n_rows, n_cols)


# ---------------------------------------------------------------------------
# permutations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Permutation:
    """``forward[old] = new`` and ``inverse[new] = old``."""

    forward: np.ndarray
    inverse: np.ndarray = field(default=None)

    def __post_init__(self):
        fwd = np.asarray(self.forward, dtype=np.int64)
        n = fwd.shape[0]
        if self.inverse is None:
            inv = np.full(n, -1, dtype=np.int64)
            if n and (fwd.min() < 0 or fwd.max() >= n):
                raise ValueError("permutation entries out of range")
            inv[fwd] = np.arange(n)
            if np.any(inv < 0):
                raise ValueError("forward array is not a bijection")
        else:
            inv = np.asarray(self.inverse, dtype=np.int64)
            if inv.shape != fwd.shape or not np.array_equal(fwd[inv], np.arange(n)):
                raise ValueError("forward and inverse are not mutual inverses")
        object.__setattr__(self, "forward", _frozen(fwd))
        object.__setattr__(self, "inverse", _frozen(inv))

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        idx = np.arange(n)
        return cls(idx, idx.copy())

    @classmethod
    def from_order(cls, order: Sequence[int]) -> "Permutation":
        """Build from an elimination/visit order: ``order[k]`` is the old index placed at ``k``."""
        inv = np.asarray(order, dtype=np.int64)
        fwd = np.empty_like(inv)
        fwd[inv] = np.arange(inv.shape[0])
        return cls(fwd, inv)

    def __len__(self) -> int:
        return self.forward.shape[0]

    def inverted(self) -> "Permutation":
        return Permutation(self.inverse, self.forward)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Move entry ``x[old]`` to position ``forward[old]``."""
        return np.asarray(x)[self.inverse]

    def unapply(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y)[self.forward]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Permutation):
            return NotImplemented
        return np.array_equal(self.forward, other.forward)


def permute(A: SparseMatrix, row_perm: Permutation, col_perm: Permutation) -> SparseMatrix:
    """Return B with ``B[row_perm(i), col_perm(j)] = A[i, j]``."""
    if len(row_perm) != A.n_rows or len(col_perm) != A.n_cols:
        raise ValueError(
            f"permutation sizes ({len(row_perm)}, {len(col_perm)}) do not match matrix {A.shape}"
        )
    r, c, v = A.coo()
    return matrix_from_coo(row_perm.forward[r], col_perm.forward[c], v, A.n_rows, A.n_cols)


def bandwidth(pattern) -> int:
    """Largest ``|i - j|`` over stored entries."""
    if isinstance(pattern, SparseMatrix):
        pattern = pattern.pattern
    if pattern.nnz == 0:
        return 0
    rows = np.repeat(np.arange(pattern.n_rows), np.diff(pattern.row_offsets))
    return int(np.max(np.abs(rows - pattern.col_indices)))


# ---------------------------------------------------------------------------
# row-block parallel SpMV
# ---------------------------------------------------------------------------


def block_bounds(n: int, thread_count: int) -> np.ndarray:
    """Contiguous blocks of ``ceil(n / thread_count)`` rows, one per thread."""
    if thread_count < 1:
        raise ValueError("thread_count must be >= 1")
    size = max(1, math.ceil(n / thread_count)) if n else 1
    bounds = np.minimum(np.arange(thread_count + 1, dtype=np.int64) * size, n)
    return bounds


class worker_threads:
    """Context manager capping numba's worker count for the enclosed calls.

    Block count is fixed by ``thread_count`` regardless of how many hardware
    threads are available, so results depend only on ``thread_count``.
    """

    def __init__(self, thread_count: int):
        self.n = max(1, min(int(thread_count), numba.config.NUMBA_NUM_THREADS))

    def __enter__(self):
        self._old = numba.get_num_threads()
        numba.set_num_threads(self.n)
        return self

    def __exit__(self, *exc):
        numba.set_num_threads(self._old)
        return False


def spmv(A: SparseMatrix, x, thread_count: int = 1) -> np.ndarray:
    x = np.ascontiguousarray(x)
    if x.ndim != 1 or x.shape[0] != A.n_cols:
        raise ValueError(f"vector of length {x.shape[0]} does not match {A.n_cols} columns")
    dtype = np.result_type(A.values.dtype, x.dtype, np.float64)
    y = np.zeros(A.n_rows, dtype=dtype)
    if A.n_rows == 0:
        return y
    bounds = block_bounds(A.n_rows, thread_count)
    data = A.values.astype(dtype, copy=False)
    xv = x.astype(dtype, copy=False)
    with worker_threads(thread_count):
        _kernels.spmv_blocks(A.row_offsets, A.col_indices, data, xv, y, bounds)
    return y


# ---------------------------------------------------------------------------
# Matrix Market coordinate text
# ---------------------------------------------------------------------------


def to_matrix_market(A: SparseMatrix) -> str:
    field_ = "complex" if np.iscomplexobj(A.values) else "real"
    lines = [f"%%MatrixMarket matrix coordinate {field_} general", f"{A.n_rows} {A.n_cols} {A.nnz}"]
    r, c, v = A.coo()
    for i, j, val in zip(r.tolist(), c.tolist(), v.tolist()):
        if field_ == "complex":
            lines.append(f"{i + 1} {j + 1} {val.real!r} {val.imag!r}")
        else:
            lines.append(f"{i + 1} {j + 1} {val!r}")
    return "\n".join(lines) + "\n"


def from_matrix_market(text: str) -> SparseMatrix:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split()
    if len(header) < 5 or header[0] != "%%MatrixMarket" or header[2] != "coordinate":
        raise SparseFormatError("expected a '%%MatrixMarket matrix coordinate' header")
    field_, symmetry = header[3], header[4]
    body = [ln for ln in lines[1:] if not ln.startswith("%")]
    n_rows, n_cols, nnz = (int(t) for t in body[0].split())
    rows, cols, vals = [], [], []
    for ln in body[1 : 1 + nnz]:
        t = ln.split()
        i, j = int(t[0]) - 1, int(t[1]) - 1
        if field_ == "complex":
            val = complex(float(t[2]), float(t[3]))
        elif field_ == "pattern":
            val = 1.0
        else:
            val = float(t[2])
        rows.append(i)
        cols.append(j)
        vals.append(val)
        if symmetry == "symmetric" and i != j:
            rows.append(j)
            cols.append(i)
            vals.append(val)
    return matrix_from_coo(rows, cols, np.asarray(vals), n_rows, n_cols)
