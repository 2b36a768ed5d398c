import numpy as np
import pytest

from conftest import GRID_SHAPES, agreed, run_on_grid
from gridmat.algorithms import (
    SingularMatrixError,
    dist_gemm,
    dist_lu_factor,
    dist_lu_solve,
    dist_svd_values_vt,
    hermitian_eig,
    tsqr,
)
from gridmat.distmat import DistMatrix, dist_norm
from gridmat.grid import DistScheme, make_grid
from gridmat.localmat import LocalMatrix, jacobi_svd, jacobi_sym_eig
from gridmat.transport import single_world


def gemm_oracle(A, B):
    m, k = A.shape
    n = B.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for kk in range(k):
                acc += A[i, kk] * B[kk, j]
            out[i, j] = acc
    return out


def fill_dist(grid, h, w, seed):
    M = DistMatrix.create(grid, h, w)
    M.fill_uniform(seed)
    return M


def set_from_array(grid, arr):
    M = DistMatrix.create(grid, arr.shape[0], arr.shape[1])
    rows = M.global_rows()
    cols = M.global_cols()
    M.local.a[:, :] = arr[np.ix_(rows, cols)]
    return M


def dominant_array(n, seed):
    lm = LocalMatrix.make(n, n)
    lm.fill_uniform(seed)
    return lm.a + n * np.eye(n)


# -- dist_gemm -----------------------------------------------------------


def test_gemm_identity_rhs():
    def body(grid):
        A = fill_dist(grid, 5, 4, seed=1)
        B = set_from_array(grid, np.eye(4))
        C = DistMatrix.create(grid, 5, 4)
        dist_gemm(1.0, A, B, 0.0, C)
        return C.to_global_array(), A.to_global_array()

    for got, a in run_on_grid(2, 2, body):
        assert np.array_equal(got, a)


def test_gemm_alpha_zero_scales_by_beta():
    def body(grid):
        A = fill_dist(grid, 3, 3, seed=2)
        B = fill_dist(grid, 3, 3, seed=3)
        C = fill_dist(grid, 3, 3, seed=4)
        before = C.to_global_array()
        dist_gemm(0.0, A, B, 0.5, C)
        return C.to_global_array(), before * 0.5

    for got, expected in run_on_grid(2, 2, body):
        assert np.array_equal(got, expected)


@pytest.mark.parametrize("r,c", [(1, 1), (2, 2), (2, 3)])
def test_gemm_matches_triple_loop_oracle(r, c):
    def body(grid):
        A = fill_dist(grid, 33, 17, seed=5)
        B = fill_dist(grid, 17, 29, seed=6)
        C = DistMatrix.create(grid, 33, 29)
        dist_gemm(1.0, A, B, 0.0, C)
        return C.to_global_array(), A.to_global_array(), B.to_global_array()

    got, a, b = (agreed([o[i] for o in run_on_grid(r, c, body)]) for i in range(3))
    expected = gemm_oracle(a, b)
    rel = np.linalg.norm(got - expected) / max(np.linalg.norm(expected), 1e-300)
    assert rel <= 1e-13


def test_gemm_panel_width_does_not_change_results():
    results = {}
    for nb in (1, 2, 32):

        def body(grid, nb=nb):
            A = fill_dist(grid, 12, 11, seed=7)
            B = fill_dist(grid, 11, 9, seed=8)
            C = DistMatrix.create(grid, 12, 9)
            dist_gemm(1.0, A, B, 0.0, C, nb=nb)
            return C.to_global_array()

        results[nb] = agreed(run_on_grid(2, 2, body))
    assert np.array_equal(results[1], results[2])
    assert np.array_equal(results[2], results[32])


def test_gemm_bitwise_identical_across_grids():
    outs = []
    for r, c in GRID_SHAPES:

        def body(grid):
            A = fill_dist(grid, 9, 8, seed=9)
            B = fill_dist(grid, 8, 7, seed=10)
            C = DistMatrix.create(grid, 9, 7)
            dist_gemm(2.0, A, B, 0.0, C)
            return C.to_global_array()

        outs.append(agreed(run_on_grid(r, c, body)))
    for other in outs[1:]:
        assert np.array_equal(outs[0], other)


def test_gemm_dimension_mismatch():
    def body(grid):
        A = DistMatrix.create(grid, 3, 4)
        B = DistMatrix.create(grid, 3, 3)
        C = DistMatrix.create(grid, 3, 3)
        with pytest.raises(ValueError, match="mismatch"):
            dist_gemm(1.0, A, B, 0.0, C)
        return True

    assert run_on_grid(1, 2, body) == [True, True]


def test_gemm_accumulates_with_beta_one():
    def body(grid):
        A = fill_dist(grid, 4, 4, seed=11)
        B = set_from_array(grid, np.eye(4))
        C = fill_dist(grid, 4, 4, seed=12)
        c0 = C.to_global_array()
        a0 = A.to_global_array()
        dist_gemm(1.0, A, B, 1.0, C)
        return C.to_global_array(), a0 + c0

    for got, expected in run_on_grid(2, 2, body):
        assert np.max(np.abs(got - expected)) <= 1e-14


# -- LU -------------------------------------------------------------------


def test_lu_of_identity():
    def body(grid):
        A = set_from_array(grid, np.eye(4))
        piv = dist_lu_factor(A)
        return piv, A.to_global_array()

    for piv, lu in run_on_grid(2, 2, body):
        assert piv == [0, 1, 2, 3]
        assert np.array_equal(lu, np.eye(4))


def test_lu_pivots_on_permutation():
    def body(grid):
        A = set_from_array(grid, np.array([[0.0, 1.0], [1.0, 0.0]]))
        piv = dist_lu_factor(A)
        return piv

    assert agreed(run_on_grid(2, 1, body)) == [1, 1]


def test_lu_singular_matrix_raises():
    def body(grid):
        A = set_from_array(grid, np.zeros((3, 3)))
        with pytest.raises(SingularMatrixError, match="singular matrix"):
            dist_lu_factor(A)
        return True

    assert run_on_grid(2, 2, body) == [True] * 4


def test_lu_rank_deficient_raises():
    arr = np.ones((3, 3))

    def body(grid):
        A = set_from_array(grid, arr)
        with pytest.raises(SingularMatrixError):
            dist_lu_factor(A)
        return True

    assert run_on_grid(1, 1, body) == [True]


@pytest.mark.parametrize("r,c", [(1, 1), (2, 2)])
def test_lu_reconstruction_pa_equals_lu(r, c):
    arr = dominant_array(24, seed=13)

    def body(grid):
        A = set_from_array(grid, arr)
        piv = dist_lu_factor(A)
        return piv, A.to_global_array()

    piv, lu = run_on_grid(r, c, body)[0]
    assert all(k <= p < 24 for k, p in enumerate(piv))
    L = np.tril(lu, -1) + np.eye(24)
    U = np.triu(lu)
    pa = arr.copy()
    for k, p in enumerate(piv):
        pa[[k, p], :] = pa[[p, k], :]
    rel = np.linalg.norm(pa - L @ U) / np.linalg.norm(arr)
    assert rel <= 1e-12


def test_lu_bitwise_identical_across_grids():
    arr = dominant_array(16, seed=14)
    outs = []
    for r, c in GRID_SHAPES:

        def body(grid):
            A = set_from_array(grid, arr)
            piv = dist_lu_factor(A)
            return tuple(piv), A.to_global_array()

        piv, lu = agreed_pair(run_on_grid(r, c, body))
        outs.append((piv, lu))
    for piv, lu in outs[1:]:
        assert piv == outs[0][0]
        assert np.array_equal(lu, outs[0][1])


def agreed_pair(results):
    first = results[0]
    for other in results[1:]:
        assert first[0] == other[0]
        assert np.array_equal(first[1], other[1])
    return first


def test_lu_reconstruction_invariant_200_instances():
    # module invariant: P*A = L*U to 1e-12 on well-conditioned inputs n <= 32
    rng = np.random.default_rng(90)
    cases = [(int(rng.integers(2, 33)), 9000 + t) for t in range(200)]

    def body(grid, batch):
        outs = []
        for n, seed in batch:
            A = set_from_array(grid, dominant_array(n, seed))
            piv = dist_lu_factor(A)
            outs.append((tuple(piv), A.to_global_array()))
        return outs

    results = run_on_grid(1, 1, body, cases[:100])[0]
    results += run_on_grid(2, 2, body, cases[100:])[0]
    for (piv, lu), (n, seed) in zip(results, cases):
        arr = dominant_array(n, seed)
        L = np.tril(lu, -1) + np.eye(n)
        U = np.triu(lu)
        pa = arr.copy()
        for k, p in enumerate(piv):
            pa[[k, p], :] = pa[[p, k], :]
        assert np.linalg.norm(pa - L @ U) / np.linalg.norm(arr) <= 1e-12


def test_lu_solve_identity_system():
    def body(grid):
        A = set_from_array(grid, np.eye(5))
        piv = dist_lu_factor(A)
        B = fill_dist(grid, 5, 2, seed=15)
        b0 = B.to_global_array()
        dist_lu_solve(A, piv, B)
        return B.to_global_array(), b0

    for got, b0 in run_on_grid(2, 2, body):
        assert np.array_equal(got, b0)


def test_lu_solve_constructed_rhs_gives_unit_vector():
    arr = dominant_array(4, seed=16)

    def body(grid):
        A = set_from_array(grid, arr)
        rhs = set_from_array(grid, arr[:, :1].copy())
        piv = dist_lu_factor(A)
        dist_lu_solve(A, piv, rhs)
        return rhs.to_global_array()

    x = agreed(run_on_grid(2, 2, body))
    e1 = np.zeros((4, 1))
    e1[0, 0] = 1.0
    assert np.max(np.abs(x - e1)) <= 1e-12


@pytest.mark.parametrize("r,c", [(1, 1), (2, 2)])
def test_lu_solve_residual(r, c):
    arr = dominant_array(20, seed=17)

    def body(grid):
        A = set_from_array(grid, arr)
        B = fill_dist(grid, 20, 5, seed=18)
        b0 = B.to_global_array()
        LU = DistMatrix.create(grid, 1, 1)
        LU.copy_from(A)
        piv = dist_lu_factor(LU)
        dist_lu_solve(LU, piv, B)
        return B.to_global_array(), b0

    x, b0 = run_on_grid(r, c, body)[0]
    resid = np.linalg.norm(arr @ x - b0)
    denom = np.linalg.norm(arr) * np.linalg.norm(x)
    assert resid / denom <= 1e-12


# -- TSQR -------------------------------------------------------------------


def test_tsqr_single_rank_equals_local_qr():
    grid = make_grid(single_world())
    A = fill_dist(grid, 8, 3, seed=19)
    V = A.redistribute(DistScheme.VC_STAR)
    R = tsqr(V)
    from gridmat.localmat import local_qr

    _, Rref = local_qr(LocalMatrix.from_array(A.to_global_array()))
    assert np.array_equal(R.a, Rref.a)


def test_tsqr_orthonormal_columns_give_identity():
    q, _ = np.linalg.qr(np.random.default_rng(20).standard_normal((12, 4)))

    def body(grid):
        A = set_from_array(grid, q)
        R = tsqr(A.redistribute(DistScheme.VC_STAR))
        return R.a

    R = agreed(run_on_grid(3, 1, body))
    assert np.max(np.abs(R - np.eye(4))) <= 1e-12


@pytest.mark.parametrize("nranks", [2, 3, 4, 5])
def test_tsqr_gram_matrix_oracle(nranks):
    def body(grid):
        A = fill_dist(grid, 64, 5, seed=21)
        R = tsqr(A.redistribute(DistScheme.VC_STAR))
        return R.a, A.to_global_array()

    R, a = run_on_grid(nranks, 1, body)[0]
    gram = a.T @ a
    rel = np.linalg.norm(R.T @ R - gram) / np.linalg.norm(gram)
    assert rel <= 1e-11
    assert np.all(np.diag(R) >= 0.0)
    assert np.max(np.abs(np.tril(R, -1))) == 0.0


def test_tsqr_replicated_identically():
    def body(grid):
        A = fill_dist(grid, 30, 4, seed=22)
        R = tsqr(A.redistribute(DistScheme.VC_STAR))
        return R.a

    outs = run_on_grid(2, 2, body)
    for other in outs[1:]:
        assert np.array_equal(outs[0], other)


def test_tsqr_short_local_blocks():
    # more ranks than rows per rank: some locals are shorter than the width
    def body(grid):
        A = fill_dist(grid, 6, 5, seed=23)
        R = tsqr(A.redistribute(DistScheme.VC_STAR))
        return R.a, A.to_global_array()

    R, a = run_on_grid(4, 1, body)[0]
    gram = a.T @ a
    assert np.linalg.norm(R.T @ R - gram) / np.linalg.norm(gram) <= 1e-11


# -- SVD ---------------------------------------------------------------------


def test_svd_diag_embedded():
    arr = np.zeros((4, 2))
    arr[0, 0] = 3.0
    arr[1, 1] = 1.0

    def body(grid):
        A = set_from_array(grid, arr)
        sigma, V = dist_svd_values_vt(A)
        return sigma, V.a

    sigma, v = run_on_grid(2, 2, body)[0]
    assert np.allclose(sigma, [3.0, 1.0], atol=1e-14)
    assert np.max(np.abs(np.abs(v) - np.eye(2))) <= 1e-14


def test_svd_zero_matrix():
    def body(grid):
        A = DistMatrix.create(grid, 5, 3)
        sigma, _ = dist_svd_values_vt(A)
        return sigma

    assert np.array_equal(agreed(run_on_grid(2, 2, body)), np.zeros(3))


@pytest.mark.parametrize("r,c", [(1, 1), (2, 2)])
def test_svd_matches_gathered_single_rank_oracle(r, c):
    def body(grid):
        A = fill_dist(grid, 40, 6, seed=24)
        sigma, V = dist_svd_values_vt(A)
        return sigma, V.a, A.to_global_array()

    sigma, v, a = run_on_grid(r, c, body)[0]
    sref, vref = jacobi_svd(LocalMatrix.from_array(a))
    assert np.max(np.abs(sigma - sref)) <= 1e-10 * max(1.0, sref[0])
    # columns match up to sign; the sign rule makes them match exactly
    assert np.max(np.abs(v - vref.a)) <= 1e-9


def test_svd_energy_identity():
    def body(grid):
        A = fill_dist(grid, 25, 7, seed=25)
        sigma, V = dist_svd_values_vt(A)
        fro = dist_norm("frobenius", A)
        return sigma, V.a, fro

    sigma, v, fro = run_on_grid(2, 3, body)[0]
    assert abs(np.sum(sigma**2) - fro**2) <= 1e-12 * fro**2
    assert np.max(np.abs(v.T @ v - np.eye(7))) <= 1e-12


def test_svd_requires_tall():
    def body(grid):
        A = DistMatrix.create(grid, 3, 5)
        with pytest.raises(ValueError, match="height >= width"):
            dist_svd_values_vt(A)
        return True

    assert run_on_grid(1, 1, body) == [True]


# -- hermitian eig -------------------------------------------------------------


def test_eig_of_identity():
    def body(grid):
        A = set_from_array(grid, np.eye(3))
        w, X = hermitian_eig(A)
        return w, X.to_global_array()

    w, x = run_on_grid(2, 2, body)[0]
    assert np.array_equal(w, np.ones(3))


def test_eig_mirrors_lower_triangle():
    arr = np.array([[2.0, 0.0], [5.0, 3.0]])

    def body(grid):
        A = set_from_array(grid, arr)
        w, _ = hermitian_eig(A)
        return w

    w = agreed(run_on_grid(2, 1, body))
    ref = np.linalg.eigvalsh(np.array([[2.0, 5.0], [5.0, 3.0]]))
    assert np.max(np.abs(w - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_eig_matches_single_rank_oracle_on_2x2_grid():
    rng = np.random.default_rng(26)
    raw = rng.uniform(-1, 1, (10, 10))
    sym = (raw + raw.T) / 2

    def body(grid):
        A = set_from_array(grid, sym)
        w, X = hermitian_eig(A)
        return w, X.to_global_array()

    w, x = run_on_grid(2, 2, body)[0]
    wref, xref = jacobi_sym_eig(LocalMatrix.from_array(sym))
    assert np.max(np.abs(w - wref)) <= 1e-10 * max(1.0, np.max(np.abs(wref)))
    resid = np.linalg.norm(sym @ x - x * w)
    assert resid <= 1e-10 * np.linalg.norm(sym)


def test_eig_rejects_upper_convention():
    def body(grid):
        A = DistMatrix.create(grid, 2, 2)
        with pytest.raises(ValueError, match="LOWER"):
            hermitian_eig(A, uplo="UPPER")
        return True

    assert run_on_grid(1, 1, body) == [True]
