import numpy as np
import pytest

from fracspec.errors import DimensionMismatch, MeshError
from fracspec.fem import (
    BasisSpec, assemble, build_mesh, error_norm, evaluate, gll_nodes, inner_product,
    lagrange_tabulate, load_vector, project, read_mesh,
)
from fracspec.linalg import dense_generalized_eig, spmv

PI = np.pi


def sines(x, y):
    return 2 * np.sin(PI * x) * np.sin(PI * y)


# meshes ---------------------------------------------------------------------

def test_build_mesh_counts():
    m = build_mesh(1, 2)
    assert np.allclose(m.vertices.ravel(), [0, 0.5, 1]) and m.n_elements == 2
    m = build_mesh(2, 1)
    assert m.n_vertices == 4 and m.n_elements == 1
    m = build_mesh(2, 8)
    assert m.n_vertices == 81 and m.n_elements == 64


@pytest.mark.parametrize("dim,n", [(3, 2), (2, 0), (0, 1)])
def test_build_mesh_rejects(dim, n):
    with pytest.raises(MeshError):
        build_mesh(dim, n)


def test_read_mesh_matches_structured():
    text = "2 9 4\n" + "\n".join(f"{x} {y}" for y in (0, .5, 1) for x in (0, .5, 1)) + "\n"
    text += "0 1 4 3\n1 2 5 4\n3 4 7 6\n4 5 8 7\n"
    imported = assemble(read_mesh(text), BasisSpec(2))
    ref = assemble(build_mesh(2, 2), BasisSpec(2))
    w1, _ = dense_generalized_eig(imported.pencil)
    w2, _ = dense_generalized_eig(ref.pencil)
    assert np.allclose(w1, w2, rtol=1e-12)


def test_read_mesh_rejects_hanging_vertex():
    # left element spans y in [0, 1], the right side is split in two
    text = """2 7 3
0 0
1 0
2 0
0 1
1 1
2 1
1 0.5
0 1 4 3
1 2 5 6
6 5 4 4
"""
    with pytest.raises(MeshError):
        read_mesh(text)


def test_read_mesh_rejects_bad_header():
    with pytest.raises(MeshError):
        read_mesh("2 x 1\n")


# assembly --------------------------------------------------------------------

def test_one_dimensional_two_elements():
    ap = assemble(build_mesh(1, 2), BasisSpec(1))
    assert np.allclose(ap.pencil.stiffness.to_dense(), [[4.0]], rtol=1e-14)
    assert np.allclose(ap.pencil.mass.to_dense(), [[1 / 3]], rtol=1e-14)


@pytest.mark.parametrize("dim,p", [(1, 1), (1, 5), (2, 1), (2, 4)])
def test_neumann_patch_and_mass(dim, p):
    ap = assemble(build_mesh(dim, 5), BasisSpec(p), bc="neumann")
    one = np.ones(ap.n)
    assert np.abs(spmv(ap.pencil.stiffness, one)).max() <= 1e-10
    assert one @ spmv(ap.pencil.mass, one) == pytest.approx(1.0, abs=1e-10)


def test_bilinear_lowest_eigenvalue():
    ap = assemble(build_mesh(2, 8), BasisSpec(1))
    w, _ = dense_generalized_eig(ap.pencil)
    assert abs(w[0] - 2 * PI ** 2) <= 0.02 * 2 * PI ** 2


def test_stiffness_semidefinite():
    ap = assemble(build_mesh(2, 3), BasisSpec(3), bc="neumann")
    X = np.random.default_rng(0).standard_normal((ap.n, 20))
    q = np.einsum("ij,ij->j", X, spmv(ap.pencil.stiffness, X))
    assert np.all(q >= -1e-10 * np.einsum("ij,ij->j", X, X))


@pytest.mark.parametrize("p", [1, 2, 3])
def test_eigenvalue_converges_under_refinement(p):
    errs = []
    for n in (2, 4, 8):
        w, _ = dense_generalized_eig(assemble(build_mesh(2, n), BasisSpec(p)).pencil)
        errs.append(w[0] - 2 * PI ** 2)
    assert errs[0] > errs[1] > errs[2] > -1e-9


def test_degenerate_pair_on_square():
    w, _ = dense_generalized_eig(assemble(build_mesh(2, 8), BasisSpec(4)).pencil)
    assert abs(w[1] - w[2]) <= 1e-9 * w[1]
    assert w[1] == pytest.approx(5 * PI ** 2, rel=1e-7)


def test_rcm_and_natural_agree():
    mesh, basis = build_mesh(2, 4), BasisSpec(3)
    w1, _ = dense_generalized_eig(assemble(mesh, basis, ordering="rcm").pencil)
    w2, _ = dense_generalized_eig(assemble(mesh, basis, ordering="natural").pencil)
    assert np.allclose(w1, w2, rtol=1e-12)


def test_gll_nodes_and_cardinality():
    for p in range(1, 9):
        x = gll_nodes(p)
        assert x[0] == -1 and x[-1] == 1 and np.all(np.diff(x) > 0)
        val, _ = lagrange_tabulate(x, x)
        assert np.allclose(val, np.eye(p + 1), atol=1e-12)


# projection, inner products, evaluation ----------------------------------------

def test_project_zero():
    ap = assemble(build_mesh(2, 3), BasisSpec(2))
    assert np.array_equal(project(lambda x, y: 0 * x, ap), np.zeros(ap.n))


def test_project_basis_function_is_unit_vector():
    ap = assemble(build_mesh(2, 3), BasisSpec(3))
    j = ap.n // 2
    delta = np.zeros(ap.n)
    delta[j] = 1.0

    def e_j(x, y):
        pts = np.column_stack([np.ravel(x), np.ravel(y)])
        return evaluate(delta, ap, pts).reshape(np.shape(x))

    assert np.allclose(project(e_j, ap), delta, atol=1e-12)


def test_projection_accuracy():
    ap = assemble(build_mesh(2, 8), BasisSpec(4))
    assert error_norm(project(sines, ap), sines, ap) <= 1e-6


def test_error_norm_of_zero_is_norm_of_exact():
    ap = assemble(build_mesh(2, 8), BasisSpec(4))
    assert error_norm(np.zeros(ap.n), sines, ap) == pytest.approx(1.0, rel=1e-12)


def test_inner_product_examples():
    ap = assemble(build_mesh(1, 2), BasisSpec(1))
    assert inner_product([1.0], [1.0], ap) == pytest.approx(1 / 3)
    assert inner_product([0.0], [0.0], ap) == 0.0
    with pytest.raises(DimensionMismatch):
        inner_product([1.0, 2.0], [1.0], ap)


def test_sine_modes_orthogonal():
    ap = assemble(build_mesh(1, 32), BasisSpec(4))
    u = project(lambda x: np.sin(PI * x), ap)
    v = project(lambda x: np.sin(2 * PI * x), ap)
    assert abs(inner_product(u, v, ap)) <= 1e-8


def test_inner_product_symmetric_positive():
    ap = assemble(build_mesh(2, 3), BasisSpec(2))
    rng = np.random.default_rng(3)
    u, v = rng.standard_normal(ap.n), rng.standard_normal(ap.n)
    assert inner_product(u, v, ap) == pytest.approx(inner_product(v, u, ap), rel=1e-13)
    assert inner_product(u, u, ap) > 0


def test_evaluate_linear_exact_neumann():
    ap = assemble(build_mesh(1, 4), BasisSpec(2), bc="neumann")
    c = project(lambda x: x, ap)
    xs = np.linspace(0, 1, 57)
    assert np.abs(evaluate(c, ap, xs) - xs).max() <= 1e-12


def test_evaluate_spectral_accuracy():
    ap = assemble(build_mesh(1, 8), BasisSpec(6))
    c = project(lambda x: np.sin(PI * x), ap)
    xs = np.linspace(0, 1, 401)
    assert np.abs(evaluate(c, ap, xs) - np.sin(PI * xs)).max() <= 1e-7


def test_evaluate_zero_and_outside():
    ap = assemble(build_mesh(2, 2), BasisSpec(2))
    pts = np.random.default_rng(0).uniform(0, 1, (10, 2))
    assert np.array_equal(evaluate(np.zeros(ap.n), ap, pts), np.zeros(10))
    with pytest.raises(MeshError):
        evaluate(np.zeros(ap.n), ap, [[1.5, 0.5]])


def test_load_vector_integrates_constant():
    ap = assemble(build_mesh(2, 3), BasisSpec(3), bc="neumann")
    assert load_vector(lambda x, y: 1.0 + 0 * x, ap).sum() == pytest.approx(1.0, abs=1e-13)
