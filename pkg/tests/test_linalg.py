import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracspec.errors import DimensionMismatch, MassNotSPD, SingularFactor, ZeroPivot
from fracspec.linalg import (
    MatrixPencil, SparseSymMatrix, dense_generalized_eig, factorizations, ldlt_factor,
    random_pencil, solve_factored, spmv,
)


def diag_pencil(*d):
    return MatrixPencil(SparseSymMatrix.diag(d), SparseSymMatrix.identity(len(d)))


# spmv ----------------------------------------------------------------------

def test_spmv_identity():
    assert np.allclose(spmv(SparseSymMatrix.identity(3), [1, 2, 3]), [1, 2, 3])


def test_spmv_diagonal():
    assert np.allclose(spmv(SparseSymMatrix.diag([2, 3]), [1, 1]), [2, 3])


def test_spmv_one_by_one_stiffness():
    assert spmv(SparseSymMatrix.from_dense([[4.0]]), [1.0])[0] == 4.0


def test_spmv_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        spmv(SparseSymMatrix.identity(3), np.ones(2))


def test_spmv_matches_dense_and_block():
    p = random_pencil(40, seed=3)
    K = p.stiffness.to_dense()
    X = np.random.default_rng(0).standard_normal((40, 5))
    assert np.allclose(spmv(p.stiffness, X), K @ X, rtol=1e-13, atol=1e-13)
    assert np.allclose(spmv(p.stiffness, X[:, 0]), K @ X[:, 0], rtol=1e-13, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_spmv_symmetry(seed):
    A = random_pencil(30, seed=seed).stiffness
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(30), rng.standard_normal(30)
    lhs, rhs = x @ spmv(A, y), y @ spmv(A, x)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


def test_csr_invariants_rejected():
    with pytest.raises(ValueError):
        SparseSymMatrix(2, [0, 1, 2], [1, 0], [1.0, 1.0])          # lower entry
    with pytest.raises(ValueError):
        SparseSymMatrix(2, [0, 2, 2], [1, 0], [1.0, 1.0])          # unsorted row
    with pytest.raises(ValueError):
        SparseSymMatrix(2, [0, 2, 1], [0, 1], [1.0, 1.0])          # offsets decrease


def test_dump_round_trip():
    A = random_pencil(12, seed=1).stiffness
    text = A.dump()
    head = text.splitlines()[0].split()
    assert head == [str(A.n), str(A.nnz)]
    B = SparseSymMatrix.load_dump(text)
    assert np.array_equal(A.to_dense(), B.to_dense())


# ldlt ----------------------------------------------------------------------

def test_inertia_diagonal():
    assert ldlt_factor(diag_pencil(1, 2, 3), 2.5).inertia == (2, 0, 1)
    assert ldlt_factor(diag_pencil(1, 2, 3), 0.0).inertia == (0, 0, 3)


def test_zero_pivot_on_eigenvalue():
    with pytest.raises(ZeroPivot):
        ldlt_factor(diag_pencil(1, 2, 3), 2.0)


def test_inertia_random_median():
    p = random_pencil(50, seed=7)
    w, _ = dense_generalized_eig(p)
    a = 0.5 * (w[24] + w[25])
    assert ldlt_factor(p, a).n_positive == 25


@pytest.mark.parametrize("ordering", ["natural", "rcm"])
def test_inertia_consistency_many_shifts(ordering):
    p = random_pencil(200, seed=11)
    p = MatrixPencil(p.stiffness, p.mass, ordering=ordering)
    w, _ = dense_generalized_eig(p)
    rng = np.random.default_rng(5)
    for a in rng.uniform(w[0] - 1, w[-1] + 1, 100):
        f = ldlt_factor(p, a)
        assert f.n_negative + f.n_zero + f.n_positive == p.n
        assert f.n_positive == np.sum(w > a)


@pytest.mark.parametrize("ordering", ["natural", "rcm"])
def test_reconstruction(ordering):
    p = random_pencil(120, seed=2)
    p = MatrixPencil(p.stiffness, p.mass, ordering=ordering)
    a = 1.3
    f = ldlt_factor(p, a)
    A = p.stiffness.to_dense() - a * p.mass.to_dense()
    assert np.linalg.norm(f.reconstruct() - A) <= 1e-8 * np.linalg.norm(A)


def test_solve_diagonal_examples():
    f = ldlt_factor(MatrixPencil(SparseSymMatrix.diag([2, 2]), SparseSymMatrix.identity(2)), 0.0)
    assert np.allclose(solve_factored(f, [2, 4]), [1, 2])
    f = ldlt_factor(diag_pencil(1, 3), 2.0)
    assert np.allclose(solve_factored(f, [1, 1]), [-1, 1])


def test_solve_matches_dense():
    p = random_pencil(30, seed=4)
    f = ldlt_factor(p, 0.0)
    b = np.random.default_rng(1).standard_normal(30)
    x = solve_factored(f, b)
    ref = np.linalg.solve(p.stiffness.to_dense(), b)
    assert np.allclose(x, ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(-0.5, 0.5))
def test_solve_recovers_rhs(seed, a):
    p = random_pencil(40, seed=seed)
    try:
        f = ldlt_factor(p, a)
    except ZeroPivot:
        return
    b = np.random.default_rng(seed).standard_normal((40, 3))
    x = solve_factored(f, b)
    r = spmv(p.stiffness, x) - a * spmv(p.mass, x) - b
    assert np.linalg.norm(r) <= 1e-9 * np.linalg.norm(b) * max(1.0, np.abs(1 / f.D).max())


def test_singular_factor_rejected():
    f = ldlt_factor(diag_pencil(1, 2), 0.0)
    g = dataclasses.replace(f, inertia=(0, 1, 1))
    with pytest.raises(SingularFactor):
        solve_factored(g, [1.0, 1.0])


def test_solve_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        solve_factored(ldlt_factor(diag_pencil(1, 2), 0.0), [1.0])


def test_half_solves_compose_to_mass_inverse():
    p = random_pencil(60, seed=9)
    f = p.mass_factor()
    b = np.random.default_rng(2).standard_normal(60)
    x = f.upper_solve(f.lower_solve(b))
    assert np.allclose(spmv(p.mass, x), b, atol=1e-11)


def test_factorization_counter():
    p = diag_pencil(1, 2, 3)
    before = factorizations.count
    ldlt_factor(p, 0.5)
    ldlt_factor(p, 1.5)
    assert factorizations.count - before == 2


# dense oracle ----------------------------------------------------------------

def test_oracle_diagonal():
    w, V = dense_generalized_eig(diag_pencil(3, 1, 2))
    assert np.allclose(w, [1, 2, 3])


def test_oracle_one_element():
    p = MatrixPencil(SparseSymMatrix.from_dense([[4.0]]), SparseSymMatrix.from_dense([[1 / 3]]))
    w, _ = dense_generalized_eig(p)
    assert w[0] == pytest.approx(12.0, rel=1e-14)


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_oracle_m_orthonormal(method):
    p = random_pencil(80, seed=6)
    w, V = dense_generalized_eig(p, method=method)
    M = p.mass.to_dense()
    assert np.abs(V.T @ M @ V - np.eye(80)).max() <= 1e-10
    assert np.all(np.diff(w) >= 0)
    K = p.stiffness.to_dense()
    assert np.abs(K @ V - M @ V * w).max() <= 1e-9 * np.abs(K).sum(axis=0).max()


def test_jacobi_agrees_with_lapack():
    p = random_pencil(60, seed=8)
    w1, _ = dense_generalized_eig(p, method="lapack")
    w2, _ = dense_generalized_eig(p, method="jacobi")
    assert np.allclose(w1, w2, rtol=1e-12, atol=1e-12 * np.abs(w1).max())


def test_oracle_rejects_indefinite_mass():
    p = MatrixPencil(SparseSymMatrix.identity(2), SparseSymMatrix.diag([1.0, -1.0]))
    with pytest.raises(MassNotSPD):
        dense_generalized_eig(p)


def test_oracle_cap():
    with pytest.raises(ValueError):
        dense_generalized_eig(diag_pencil(1, 2, 3), cap=2)
