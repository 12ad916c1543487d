import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gridflow.sparse import (
    Permutation,
    SparseFormatError,
    SparseMatrix,
    bandwidth,
    block_bounds,
    from_matrix_market,
    matrix_from_coo,
    matrix_from_triplets,
    permute,
    spmv,
    to_matrix_market,
)


@st.composite
def sparse_dense(draw, max_n=12, square=False, complex_=False):
    n_rows = draw(st.integers(1, max_n))
    n_cols = n_rows if square else draw(st.integers(1, max_n))
    vals = draw(arrays(float, (n_rows, n_cols), elements=st.floats(-1e3, 1e3, allow_nan=False, width=64)))
    mask = draw(arrays(bool, (n_rows, n_cols)))
    a = np.where(mask, vals, 0.0)
    if complex_:
        a = a + 1j * np.where(mask, vals[::-1, ::-1] if n_rows == n_cols else vals, 0.0)
    return a


def test_single_entry():
    A = matrix_from_triplets([(0, 0, 2.0)], 1, 1)
    assert A.to_dense().tolist() == [[2.0]]


def test_duplicates_summed():
    A = matrix_from_triplets([(0, 1, 1.0), (0, 1, 2.0)], 1, 2)
    assert A.nnz == 1 and A.values[0] == 3.0


def test_rows_sorted():
    A = matrix_from_triplets([(1, 0, 5.0), (0, 1, 4.0)], 2, 2)
    assert A.nnz == 2
    assert A.pattern.row(0).tolist() == [1]


def test_out_of_bounds_names_entry():
    with pytest.raises(SparseFormatError, match=r"entry 1 \(2, 0\)"):
        matrix_from_triplets([(0, 0, 1.0), (2, 0, 1.0)], 2, 2)


def test_check_rejects_unsorted_columns():
    A = SparseMatrix(1, 3, np.array([0, 2]), np.array([2, 0]), np.array([1.0, 1.0]))
    with pytest.raises(SparseFormatError, match="strictly increasing"):
        A.check()


@given(sparse_dense(complex_=True))
def test_assembly_invariants(a):
    A = SparseMatrix.from_dense(a)
    A.check()
    ro = A.row_offsets
    assert ro[0] == 0 and ro[-1] == A.nnz and np.all(np.diff(ro) >= 0)
    for i in range(A.n_rows):
        c = A.pattern.row(i)
        assert np.all(np.diff(c) > 0) and np.all(c < A.n_cols)
    np.testing.assert_array_equal(A.to_dense(), a)


def test_spmv_examples():
    x = np.array([1.0, 2.0, 3.0])
    for t in (1, 2, 4, 8):
        np.testing.assert_array_equal(spmv(SparseMatrix.identity(3), x, t), x)
    A = SparseMatrix.from_dense([[2.0, 0.0], [1.0, 3.0]])
    assert spmv(A, np.ones(2), 1).tolist() == [2.0, 4.0]
    assert spmv(A, np.ones(2), 4).tolist() == [2.0, 4.0]
    Z = matrix_from_triplets([], 3, 3)
    assert spmv(Z, np.array([1.0, -2.0, 5.0]), 2).tolist() == [0.0, 0.0, 0.0]


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError):
        spmv(SparseMatrix.identity(3), np.ones(2))


@given(sparse_dense(max_n=40, complex_=True), st.data())
def test_spmv_bit_identical_across_threads(a, data):
    x = data.draw(arrays(complex, a.shape[1], elements=st.complex_numbers(max_magnitude=1e3, allow_nan=False)))
    A = SparseMatrix.from_dense(a)
    ref = spmv(A, x, 1)
    for t in (2, 4, 8):
        assert spmv(A, x, t).tobytes() == ref.tobytes()
    np.testing.assert_allclose(ref, a @ x, rtol=1e-12, atol=1e-9)


@given(st.integers(0, 1000), st.integers(1, 16))
def test_block_bounds_cover_rows(n, t):
    b = block_bounds(n, t)
    assert b[0] == 0 and b[-1] == n and len(b) == t + 1
    assert np.all(np.diff(b) >= 0)
    if n:
        assert np.max(np.diff(b)) == -(-n // t)


def test_permute_examples():
    A = SparseMatrix.from_dense([[1.0, 0.0], [0.0, 2.0]])
    I2 = Permutation.identity(2)
    assert permute(A, I2, I2) == A
    swap = Permutation(np.array([1, 0]))
    assert permute(A, swap, swap).to_dense().tolist() == [[2.0, 0.0], [0.0, 1.0]]
    with pytest.raises(ValueError):
        permute(A, Permutation.identity(3), I2)


def test_permute_random_round_trip(rng):
    a = rng.standard_normal((5, 5)) * (rng.random((5, 5)) < 0.5)
    A = SparseMatrix.from_dense(a)
    p, q = Permutation(rng.permutation(5)), Permutation(rng.permutation(5))
    B = permute(A, p, q)
    assert B.nnz == A.nnz
    assert permute(B, p.inverted(), q.inverted()) == A


@given(sparse_dense(), st.data())
def test_permute_round_trip_property(a, data):
    A = SparseMatrix.from_dense(a)
    p = Permutation(np.array(data.draw(st.permutations(range(a.shape[0])))))
    q = Permutation(np.array(data.draw(st.permutations(range(a.shape[1])))))
    B = permute(A, p, q)
    np.testing.assert_array_equal(B.to_dense()[np.ix_(p.forward, q.forward)], a)
    assert permute(B, p.inverted(), q.inverted()) == A


@given(st.permutations(range(9)))
def test_permutation_mutual_inverse(order):
    p = Permutation(np.array(order))
    np.testing.assert_array_equal(p.forward[p.inverse], np.arange(9))
    np.testing.assert_array_equal(p.inverse[p.forward], np.arange(9))
    x = np.arange(9) * 10
    np.testing.assert_array_equal(p.unapply(p.apply(x)), x)


def test_permutation_rejects_non_bijection():
    with pytest.raises(ValueError):
        Permutation(np.array([0, 0, 1]))


def test_bandwidth():
    A = SparseMatrix.from_dense(np.eye(4) + np.eye(4, k=2))
    assert bandwidth(A) == 2
    assert bandwidth(matrix_from_triplets([], 3, 3)) == 0


@given(sparse_dense(complex_=True))
def test_matrix_market_round_trip(a):
    A = SparseMatrix.from_dense(a)
    text = to_matrix_market(A)
    assert text.startswith("%%MatrixMarket matrix coordinate")
    assert from_matrix_market(text) == A


def test_matrix_market_symmetric_pattern():
    text = "%%MatrixMarket matrix coordinate pattern symmetric\n3 3 2\n2 1\n3 3\n"
    A = from_matrix_market(text)
    assert A.to_dense().tolist() == [[0, 1, 0], [1, 0, 0], [0, 0, 1]]


def test_coo_assembly_complex_duplicates():
    A = matrix_from_coo([0, 0, 1], [1, 1, 0], np.array([1 + 1j, 2 - 3j, 4j]), 2, 2)
    assert A.to_dense().tolist() == [[0, 3 - 2j], [4j, 0]]
