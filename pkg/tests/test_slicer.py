import numpy as np
import pytest

from fracspec.errors import BasisMismatch, RankDeficientCluster, SliceIncomplete
from fracspec.fem import BasisSpec, assemble, build_mesh
from fracspec.linalg import (
    MatrixPencil, SparseSymMatrix, dense_generalized_eig, factorizations, random_pencil,
)
from fracspec.partition import PartitionPlan, partition
from fracspec.slicer import (
    PHASES, EigenBasis, EvaluatorPool, SliceTask, SolverOptions, compute_eigenbasis,
    postprocess, solve_all, solve_slice,
)


def diag_pencil(d):
    return MatrixPencil(SparseSymMatrix.diag(d), SparseSymMatrix.identity(len(d)))


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))


@pytest.fixture(scope="module")
def square_p2():
    ap = assemble(build_mesh(2, 8), BasisSpec(2))
    w, _ = dense_generalized_eig(ap.pencil)
    return ap, w


@pytest.fixture(scope="module")
def square_p2_basis(square_p2):
    ap, _ = square_p2
    return compute_eigenbasis(ap.pencil, P=4)


# single slices ------------------------------------------------------------------

def test_empty_slice_no_factorization():
    p = diag_pencil(np.arange(1.0, 11))
    before = factorizations.count
    assert solve_slice(p, SliceTask(3.2, 3.8, 0)) == []
    assert factorizations.count == before


def test_diagonal_slice():
    pairs = solve_slice(diag_pencil(np.arange(1.0, 11)), SliceTask(3.5, 6.5, 3))
    assert np.allclose([q.value for q in pairs], [4, 5, 6], rtol=1e-12)
    assert max(q.residual for q in pairs) <= 1e-10


def test_slice_task_validation():
    with pytest.raises(ValueError):
        SliceTask(1.0, 2.0, -1)
    with pytest.raises(ValueError):
        SliceTask(2.0, 1.0, 1)
    assert SliceTask(1.0, 3.0, 1).shift == 2.0


def test_square_slices_match_oracle(square_p2):
    ap, w = square_p2
    plan = partition(ap.pencil, 4)
    for i, ((lo, hi), c) in enumerate(zip(plan.intervals, plan.counts)):
        pairs = solve_slice(ap.pencil, SliceTask(lo, hi, int(c), i))
        ref = w[(w >= lo) & (w < hi)]
        assert len(pairs) == c == ref.size
        assert rel_err(np.array([q.value for q in pairs]), ref) <= 1e-8


def test_wide_slice_is_bisected():
    p = random_pencil(200, seed=3)
    w, _ = dense_generalized_eig(p)
    opts = SolverOptions(max_slice_count=40)
    pairs = solve_slice(p, SliceTask(w[0] - 0.1, w[-1] + 0.1, 200), opts)
    assert rel_err(np.array([q.value for q in pairs]), w) <= 1e-8


def test_wrong_expected_count_raises():
    p = diag_pencil(np.arange(1.0, 11))
    with pytest.raises(SliceIncomplete):
        solve_slice(p, SliceTask(3.5, 6.5, 4), SolverOptions(max_restarts=3, max_depth=1))


# full spectrum --------------------------------------------------------------------

def test_single_evaluator_matches_oracle():
    p = random_pencil(300, seed=12)
    w, _ = dense_generalized_eig(p)
    basis = compute_eigenbasis(p, P=1)
    assert basis.count == 300
    assert rel_err(basis.values, w) <= 1e-8


def test_four_evaluators_match_one(square_p2, square_p2_basis):
    ap, w = square_p2
    one = compute_eigenbasis(ap.pencil, P=1)
    assert rel_err(square_p2_basis.values, one.values) <= 1e-8
    assert rel_err(square_p2_basis.values, w) <= 1e-8


def test_basis_invariants(square_p2_basis):
    b = square_p2_basis
    assert np.all(np.diff(b.values) >= 0)
    assert b.orthonormality_error() <= 1e-8
    assert b.scaled_residuals().max() <= 1e-8
    assert set(b.timings) == set(PHASES)


def test_degenerate_pair_orthogonal(square_p2_basis):
    b = square_p2_basis
    M = b.pencil.mass.to_dense()
    # modes (1,2) and (2,1) share an eigenvalue near 5 pi^2
    assert abs(b.values[1] - b.values[2]) <= 1e-8 * b.values[1]
    assert abs(b.vectors[:, 1] @ M @ b.vectors[:, 2]) <= 1e-10


def test_cluster_projector_independent_of_P(square_p2, square_p2_basis):
    ap, _ = square_p2
    other = compute_eigenbasis(ap.pencil, P=2)
    M = ap.pencil.mass.to_dense()
    A, B = square_p2_basis.vectors[:, 1:3], other.vectors[:, 1:3]
    assert np.allclose(A @ (A.T @ M), B @ (B.T @ M), atol=1e-8)


def test_plan_with_empty_slice():
    p = diag_pencil(np.arange(1.0, 9))
    plan = PartitionPlan([0.5, 4.5, 4.7, 8.5], [8, 4, 4, 0], 8.5)
    basis = solve_all(p, plan, EvaluatorPool(plan.P))
    assert np.allclose(basis.values, np.arange(1.0, 9))


def test_boundary_eigenvalue_belongs_to_upper_slice():
    p = diag_pencil(np.arange(1.0, 9))
    plan = PartitionPlan([0.5, 4.0, 8.5], [8, 5, 0], 8.5)
    basis = solve_all(p, plan, EvaluatorPool(2))
    assert np.allclose(basis.values, np.arange(1.0, 9))


def test_task_order_does_not_matter(square_p2):
    ap, _ = square_p2
    plan = partition(ap.pencil, 4)

    class Reversed(EvaluatorPool):
        def run(self, fn, tasks):
            out = super().run(fn, list(tasks)[::-1])
            return out[::-1]

    a = solve_all(ap.pencil, plan, EvaluatorPool(4))
    b = solve_all(ap.pencil, plan, Reversed(4))
    assert np.array_equal(a.values, b.values)


def test_pool_runs_each_task_once():
    pool = EvaluatorPool(3, max_workers=3)
    tasks = [SliceTask(i, i + 1.0, 0, i) for i in range(7)]
    out = pool.run(lambda t: t.index, tasks)
    assert out == list(range(7))
    assert sorted(entry[0] for entry in pool.log) == list(range(7))


def test_workers_capped_by_environment(monkeypatch):
    monkeypatch.setenv("FRACSPEC_THREADS", "2")
    assert EvaluatorPool(8).workers == 2


# postprocess ---------------------------------------------------------------------

def _copy(b):
    return EigenBasis(b.values.copy(), np.array(b.vectors, order="F"), b.residuals.copy(),
                      b.pencil, dict(b.meta))


def test_postprocess_simple_values_only_rescales():
    p = random_pencil(60, seed=2)
    w, V = dense_generalized_eig(p)
    b = EigenBasis(w, np.asfortranarray(V * 3.0), np.zeros(60), p)
    postprocess(b)
    assert b.orthonormality_error() <= 1e-10
    assert np.allclose(b.vectors, V, atol=1e-12)


def test_postprocess_restores_cluster_orthogonality(square_p2_basis):
    b = _copy(square_p2_basis)
    b.vectors[:, 2] = b.vectors[:, 2] + 0.3 * b.vectors[:, 1]
    postprocess(b)
    assert b.orthonormality_error() <= 1e-10


def test_postprocess_zero_tolerance_leaves_clusters(square_p2_basis):
    b = _copy(square_p2_basis)
    b.vectors[:, 2] = b.vectors[:, 2] + 0.3 * b.vectors[:, 1]
    postprocess(b, cluster_tol=0.0)
    assert b.meta["clusters"] == 0
    assert b.orthonormality_error() > 1e-3


def test_postprocess_rank_deficient(square_p2_basis):
    b = _copy(square_p2_basis)
    b.vectors[:, 2] = b.vectors[:, 1]
    with pytest.raises(RankDeficientCluster):
        postprocess(b)


# persistence -----------------------------------------------------------------------

def test_save_load_round_trip(tmp_path, square_p2, square_p2_basis):
    ap, _ = square_p2
    b = square_p2_basis
    b.meta["mesh_hash"] = ap.digest
    b.save(tmp_path)
    lines = (tmp_path / "eigenvalues.txt").read_text().split()
    assert len(lines) == b.count
    raw = np.fromfile(tmp_path / "eigenvectors.bin", dtype="<f8")
    assert np.array_equal(raw[:b.n], b.vectors[:, 0])
    back = EigenBasis.load(tmp_path, ap.pencil, digest=ap.digest)
    assert np.array_equal(back.values, b.values)
    assert np.array_equal(back.vectors, b.vectors)


def test_load_rejects_other_discretization(tmp_path, square_p2, square_p2_basis):
    ap, _ = square_p2
    square_p2_basis.meta["mesh_hash"] = ap.digest
    square_p2_basis.save(tmp_path)
    with pytest.raises(BasisMismatch):
        EigenBasis.load(tmp_path, ap.pencil, digest="something-else")
    other = assemble(build_mesh(2, 4), BasisSpec(2))
    with pytest.raises(BasisMismatch):
        EigenBasis.load(tmp_path, other.pencil)


def test_load_rejects_corrupted_vectors(tmp_path, square_p2, square_p2_basis):
    ap, _ = square_p2
    square_p2_basis.save(tmp_path)
    raw = np.fromfile(tmp_path / "eigenvectors.bin", dtype="<f8")
    (raw * 2.0).tofile(tmp_path / "eigenvectors.bin")
    with pytest.raises(BasisMismatch):
        EigenBasis.load(tmp_path, ap.pencil)
