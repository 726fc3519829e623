import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from coanda.errors import ShiftRetryError, SingularMatrixError, StructuralError
from coanda.linalg import (BlockMatrix, LuFactor, csr_from_triplets,
                           eigs_shift_invert, export_matrix_market, lu_solve,
                           matrix_market_string, max_asymmetry)


# -- csr_from_triplets ------------------------------------------------------------

def test_duplicate_entries_summed():
    A = csr_from_triplets(1, 1, [(0, 0, 1.0), (0, 0, 2.0)])
    np.testing.assert_allclose(A.toarray(), [[3.0]])


def test_empty_triplets_zero_matrix():
    A = csr_from_triplets(3, 3, [])
    assert A.nnz == 0
    assert A.indptr.tolist() == [0, 0, 0, 0]


def test_out_of_range_rejected():
    with pytest.raises(StructuralError):
        csr_from_triplets(2, 2, [(2, 0, 1.0)])
    with pytest.raises(StructuralError):
        csr_from_triplets(2, 2, [(0, -1, 1.0)])


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4),
                          st.floats(-10, 10)), max_size=40))
@settings(max_examples=50, deadline=None)
def test_random_triplets_match_dense_accumulation(triplets):
    dense = np.zeros((5, 5))
    for r, c, v in triplets:
        dense[r, c] += v
    A = csr_from_triplets(5, 5, triplets)
    np.testing.assert_allclose(A.toarray(), dense, atol=1e-12)
    # canonical form: sorted, deduplicated column indices per row
    for i in range(5):
        cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
        assert np.all(np.diff(cols) > 0)


# -- LU ---------------------------------------------------------------------------

def test_lu_identity():
    A = sp.identity(6, format="csr")
    b = np.arange(6.0)
    np.testing.assert_allclose(lu_solve(A, b), b)


def test_lu_diagonal():
    A = sp.diags([2.0, 4.0]).tocsr()
    np.testing.assert_allclose(lu_solve(A, np.array([2.0, 8.0])), [1.0, 2.0])


def test_lu_spd_matches_dense_oracle(rng):
    n = 50
    B = sp.random(n, n, density=0.1, random_state=np.random.RandomState(3))
    A = (B @ B.T + 10 * sp.identity(n)).tocsr()
    b = rng.standard_normal(n)
    expected = la.solve(A.toarray(), b)  # dense Gaussian elimination oracle
    x = lu_solve(A, b)
    np.testing.assert_allclose(x, expected, rtol=1e-10, atol=1e-12)
    res = np.linalg.norm(A @ x - b)
    bound = 1e-10 * (sp.linalg.norm(A) * np.linalg.norm(x) + np.linalg.norm(b))
    assert res <= bound


def test_lu_roundtrip_100_random_instances():
    rs = np.random.RandomState(11)
    for _ in range(100):
        n = rs.randint(5, 40)
        A = (sp.random(n, n, density=0.3, random_state=rs)
             + sp.diags(1.0 + rs.rand(n))).tocsr()
        b = rs.randn(n)
        x = lu_solve(A, b)
        assert np.linalg.norm(A @ x - b) <= 1e-9 * max(1.0, np.linalg.norm(b))


def test_lu_factorization_reusable():
    A = sp.diags([1.0, 2.0, 3.0]).tocsr()
    lu = LuFactor(A)
    for b in (np.ones(3), np.arange(3.0)):
        np.testing.assert_allclose(A @ lu.solve(b), b)


def test_singular_matrix_reports_pivot():
    A = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(SingularMatrixError) as exc:
        LuFactor(A)
    assert exc.value.pivot_index >= -1


def test_near_singular_pivot_threshold():
    A = sp.diags([1.0, 1e-15]).tocsr()
    with pytest.raises(SingularMatrixError):
        LuFactor(A)


# -- generalized eigensolver ---------------------------------------------------------

def test_eigs_diagonal_nearest_shift():
    A = sp.diags([1.0, 2.0, 3.0, 4.0, 5.0]).tocsr()
    M = sp.identity(5, format="csr")
    res = eigs_shift_invert(A, M, k=1, shift=0.0)
    assert res.converged
    assert res.values()[0] == pytest.approx(1.0, abs=1e-10)


def test_eigs_match_dense_qz_oracle(rng):
    n = 20
    A = rng.standard_normal((n, n))
    A = sp.csr_matrix(A + A.T)
    M = sp.identity(n, format="csr")
    res = eigs_shift_invert(A, M, k=5, shift=0.0)
    got = np.sort_complex(res.values())
    dense = la.eig(A.toarray(), np.eye(n), right=False)
    expected = dense[np.argsort(np.abs(dense))[:5]]
    np.testing.assert_allclose(np.sort_complex(expected), got, rtol=1e-8, atol=1e-8)


def test_eigs_identity_pencil():
    rs = np.random.RandomState(5)
    M = sp.csr_matrix(rs.randn(12, 12) + 12 * np.eye(12))
    res = eigs_shift_invert(M, M, k=3, shift=0.7)
    np.testing.assert_allclose(res.values(), np.ones(3), atol=1e-10)


def test_eigs_residuals_verified_by_spmv():
    A = sp.diags(np.arange(1.0, 16.0)).tocsr()
    M = sp.identity(15, format="csr")
    res = eigs_shift_invert(A, M, k=4, shift=2.2)
    for p in res.pairs:
        x = p.vector
        r = np.linalg.norm(A @ x - p.value * (M @ x)) / np.linalg.norm(x)
        assert r == pytest.approx(p.residual_norm, rel=1e-6, abs=1e-14)
        assert p.residual_norm <= 1e-8


def test_eigs_singular_shift_raises_retry():
    A = sp.identity(10, format="csr")
    M = sp.identity(10, format="csr")
    with pytest.raises(ShiftRetryError):
        eigs_shift_invert(A, M, k=2, shift=1.0)  # A - 1*M is exactly singular


# -- spmv transpose / misc --------------------------------------------------------------

@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_spmv_transpose_matches_dense(seed):
    rs = np.random.RandomState(seed % 2 ** 31)
    A = sp.random(8, 6, density=0.4, random_state=rs).tocsr()
    x = rs.randn(8)
    np.testing.assert_allclose(A.T @ x, A.toarray().T @ x, atol=1e-12)


def test_block_matrix_shape_checks():
    A = sp.identity(2, format="csr")
    with pytest.raises(StructuralError):
        BlockMatrix([[A, None], [None, sp.identity(3, format="csr")]], [2, 3], [2, 2])
    bm = BlockMatrix([[A, None], [None, None]], [2, 2], [2, 2])
    assert bm.shape == (4, 4)
    assert bm.tocsr().nnz == 2


def test_block_matrix_flatten_preserves_nonzeros(rng):
    A = sp.random(3, 4, density=0.5, random_state=np.random.RandomState(2)).tocsr()
    B = sp.random(2, 4, density=0.5, random_state=np.random.RandomState(3)).tocsr()
    bm = BlockMatrix([[A], [B]], [3, 2], [4])
    flat = bm.tocsr()
    np.testing.assert_allclose(flat.toarray(), np.vstack([A.toarray(), B.toarray()]))


def test_matrix_market_header(tmp_path):
    A = csr_from_triplets(2, 2, [(0, 1, 3.5)])
    path = tmp_path / "a.mtx"
    export_matrix_market(A, path)
    first = path.read_text().splitlines()[0]
    assert first.startswith("%%MatrixMarket matrix coordinate real general")
    assert "3.5" in matrix_market_string(A)


def test_max_asymmetry():
    A = sp.csr_matrix(np.array([[0.0, 1.0], [0.5, 0.0]]))
    assert max_asymmetry(A) == pytest.approx(0.5)
    assert max_asymmetry(A + A.T) == 0.0
