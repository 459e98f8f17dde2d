"""Tensor-product Lagrange finite elements on axis-aligned 1D/2D meshes.

Shape functions are Lagrange polynomials on Gauss-Lobatto-Legendre nodes;
integrals use Gauss-Legendre quadrature with ``order + 2`` points per
direction, which integrates the mass integrand exactly.  Dirichlet
conditions are imposed by restricting to interior dofs, so the discrete
spectrum is exactly that of the restricted pencil.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from numpy.polynomial import legendre

from .errors import DimensionMismatch, MeshError
from .linalg import MatrixPencil, SparseSymMatrix, spmv

__all__ = [
    "StructuredMesh", "BasisSpec", "DofMap", "AssembledPencil",
    "build_mesh", "read_mesh", "assemble", "project", "load_vector",
    "inner_product", "evaluate", "error_norm", "quadrature_points",
]


# ----------------------------------------------------------------------------
# meshes

@dataclass(frozen=True, eq=False)
class StructuredMesh:
    """Axis-aligned conforming mesh of intervals (1D) or quads (2D).

    Quads list their vertices counter-clockwise from the lower-left
    corner.  ``elements_per_side`` is None for imported meshes.
    """

    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    bounds: tuple
    elements_per_side: int | None = None

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @cached_property
    def boxes(self):
        """Per-element (lower corner, sizes), each of shape (ne, dim)."""
        corners = self.vertices[self.elements]          # (ne, nv_e, dim)
        lo = corners.min(axis=1)
        return lo, corners.max(axis=1) - lo

    @cached_property
    def digest(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.elements, dtype="<i8").tobytes())
        return h.hexdigest()


def build_mesh(dim, elements_per_side, bounds=None):
    """Uniform grid on an interval or rectangle, vertices in lexicographic order."""
    if dim not in (1, 2):
        raise MeshError(f"dim must be 1 or 2, got {dim}")
    n = int(elements_per_side)
    if n < 1:
        raise MeshError("elements_per_side must be >= 1")
    if bounds is None:
        bounds = ((0.0, 1.0),) * dim
    bounds = np.asarray(bounds, dtype=float).reshape(dim, 2)
    if np.any(bounds[:, 1] <= bounds[:, 0]):
        raise MeshError("degenerate domain bounds")
    axes = [np.linspace(b0, b1, n + 1) for b0, b1 in bounds]
    if dim == 1:
        verts = axes[0][:, None]
        elems = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    else:
        X, Y = np.meshgrid(axes[0], axes[1])
        verts = np.column_stack([X.ravel(), Y.ravel()])
        ex, ey = np.meshgrid(np.arange(n), np.arange(n))
        v0 = (ey * (n + 1) + ex).ravel()
        elems = np.column_stack([v0, v0 + 1, v0 + n + 2, v0 + n + 1])
    return StructuredMesh(dim, verts, elems.astype(np.int64),
                          tuple(map(tuple, bounds)), n)


def read_mesh(source):
    """Parse the text mesh format.

    Line 1 is ``dim nverts nelems``; then one coordinate line per vertex and
    one 0-based connectivity line per element.  Elements must be
    axis-aligned with positive measure and the mesh must be conforming.
    """
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    try:
        dim, nv, ne = (int(t) for t in rows[0])
    except (ValueError, IndexError):
        raise MeshError("bad mesh header, expected 'dim nverts nelems'") from None
    if dim not in (1, 2):
        raise MeshError(f"unsupported dimension {dim}")
    if len(rows) != 1 + nv + ne:
        raise MeshError(f"expected {nv} vertex and {ne} element lines")
    verts = np.array(rows[1:1 + nv], dtype=float).reshape(nv, dim)
    elems = np.array(rows[1 + nv:], dtype=np.int64)
    if elems.shape != (ne, 2 ** dim):
        raise MeshError(f"each element needs {2 ** dim} vertex indices")
    if elems.min() < 0 or elems.max() >= nv:
        raise MeshError("connectivity references a missing vertex")
    _check_conforming(dim, verts, elems)
    bounds = tuple((float(lo), float(hi)) for lo, hi in zip(verts.min(0), verts.max(0)))
    return StructuredMesh(dim, verts, elems, bounds, None)


def _check_conforming(dim, verts, elems):
    c = verts[elems]
    if dim == 1:
        if np.any(c[:, 1, 0] <= c[:, 0, 0]):
            raise MeshError("intervals must have positive length, left to right")
        edges = elems.reshape(-1, 1)
    else:
        x0, y0 = c[:, 0, 0], c[:, 0, 1]
        ok = (np.isclose(c[:, 1, 1], y0) & np.isclose(c[:, 3, 0], x0)
              & np.isclose(c[:, 2, 0], c[:, 1, 0]) & np.isclose(c[:, 2, 1], c[:, 3, 1])
              & (c[:, 1, 0] > x0) & (c[:, 3, 1] > y0))
        if not np.all(ok):
            raise MeshError("quads must be axis-aligned, counter-clockwise from lower-left")
        edges = np.sort(elems[:, [[0, 1], [1, 2], [3, 2], [0, 3]]], axis=2).reshape(-1, 2)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("a facet is shared by more than two elements")
    # hanging vertices: a vertex strictly inside some element or edge
    lo, hi = c.min(axis=1), c.max(axis=1)
    used = np.unique(elems)
    for v in used:
        p = verts[v]
        inside = np.all((p >= lo - 1e-12) & (p <= hi + 1e-12), axis=1)
        owners = np.flatnonzero(inside)
        for e in owners:
            if v not in elems[e]:
                raise MeshError(f"vertex {v} hangs on element {e} (nonconforming)")


# ----------------------------------------------------------------------------
# 1D reference element

def gll_nodes(p):
    """Gauss-Lobatto-Legendre nodes on [-1, 1]."""
    if p == 1:
        return np.array([-1.0, 1.0])
    coef = np.zeros(p + 1)
    coef[-1] = 1.0
    inner = np.sort(legendre.legroots(legendre.legder(coef)).real)
    return np.concatenate([[-1.0], inner, [1.0]])


def lagrange_tabulate(nodes, x):
    """Values and derivatives of the Lagrange basis on ``nodes`` at ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    m = nodes.size
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    denom = diff.prod(axis=1)
    t = x[:, None] - nodes[None, :]                     # (nx, m)
    val = np.empty((x.size, m))
    der = np.zeros((x.size, m))
    for i in range(m):
        others = np.delete(np.arange(m), i)
        val[:, i] = t[:, others].prod(axis=1) / denom[i]
        for j in others:
            rest = others[others != j]
            der[:, i] += t[:, rest].prod(axis=1)
        der[:, i] /= denom[i]
    return val, der


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """Order-``p`` GLL Lagrange basis with ``p + 2``-point Gauss quadrature."""

    order: int

    def __post_init__(self):
        if not 1 <= self.order <= 8:
            raise ValueError(f"basis order must be in [1, 8], got {self.order}")

    @property
    def q(self):
        return self.order + 2

    @cached_property
    def nodes(self):
        return gll_nodes(self.order)

    def quadrature(self, q=None):
        return legendre.leggauss(q or self.q)

    @cached_property
    def reference_matrices(self):
        """(stiffness, mass) on [-1, 1]."""
        xq, wq = self.quadrature()
        B, dB = lagrange_tabulate(self.nodes, xq)
        return (dB.T * wq) @ dB, (B.T * wq) @ B


# ----------------------------------------------------------------------------
# dofs

@dataclass(frozen=True, eq=False)
class DofMap:
    n_total: int
    elem_dofs: np.ndarray        # (ne, (p+1)^dim), local index j*(p+1)+i
    coords: np.ndarray           # (n_total, dim)
    boundary: np.ndarray
    free: np.ndarray

    @property
    def n_free(self):
        return self.free.size


def _build_dofmap(mesh, p):
    dim, elems = mesh.dim, mesh.elements
    nv, ne = mesh.n_vertices, mesh.n_elements
    nodes = gll_nodes(p)
    if dim == 1:
        nloc = p + 1
        ed = np.empty((ne, nloc), dtype=np.int64)
        ed[:, 0], ed[:, p] = elems[:, 0], elems[:, 1]
        ed[:, 1:p] = nv + np.arange(ne)[:, None] * (p - 1) + np.arange(p - 1)
        facet_count = np.bincount(elems.ravel(), minlength=nv)
        boundary = np.flatnonzero(facet_count == 1)
    else:
        nloc = (p + 1) ** 2
        ed = np.empty((ne, p + 1, p + 1), dtype=np.int64)   # [e, j, i]
        ed[:, 0, 0], ed[:, 0, p] = elems[:, 0], elems[:, 1]
        ed[:, p, p], ed[:, p, 0] = elems[:, 2], elems[:, 3]
        # local edges in the direction of increasing i (or j)
        local = [(0, 1), (1, 2), (3, 2), (0, 3)]
        ev = np.stack([elems[:, [a, b]] for a, b in local], axis=1)     # (ne, 4, 2)
        key = np.sort(ev, axis=2).reshape(-1, 2)
        uniq, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inv = inv.reshape(ne, 4)
        nedge = uniq.shape[0]
        k = np.arange(p - 1)
        base = nv + inv[..., None] * (p - 1)                            # (ne, 4, 1)
        flipped = (ev[..., 0] > ev[..., 1])[..., None]
        edofs = base + np.where(flipped, p - 2 - k, k)                  # (ne, 4, p-1)
        if p > 1:
            ed[:, 0, 1:p] = edofs[:, 0]
            ed[:, 1:p, p] = edofs[:, 1]
            ed[:, p, 1:p] = edofs[:, 2]
            ed[:, 1:p, 0] = edofs[:, 3]
            ed[:, 1:p, 1:p] = (nv + nedge * (p - 1) + np.arange(ne)[:, None, None] * (p - 1) ** 2
                               + np.arange((p - 1) ** 2).reshape(p - 1, p - 1))
        ed = ed.reshape(ne, nloc)
        bedges = np.flatnonzero(cnt == 1)
        bverts = np.unique(uniq[bedges])
        bed = (nv + bedges[:, None] * (p - 1) + k).ravel()
        boundary = np.concatenate([bverts, bed])
    n_total = int(ed.max()) + 1
    # physical coordinates of every dof
    lo, size = mesh.boxes
    ref = (nodes + 1.0) / 2.0
    coords = np.empty((n_total, dim))
    if dim == 1:
        coords[ed, 0] = lo[:, :1] + size[:, :1] * ref
    else:
        gx = lo[:, 0, None, None] + size[:, 0, None, None] * ref[None, None, :]
        gy = lo[:, 1, None, None] + size[:, 1, None, None] * ref[None, :, None]
        coords[ed, 0] = np.broadcast_to(gx, (ne, p + 1, p + 1)).reshape(ne, nloc)
        coords[ed, 1] = np.broadcast_to(gy, (ne, p + 1, p + 1)).reshape(ne, nloc)
    # renumber lexicographically (y slow, x fast) so structured grids stay banded
    order = np.lexsort(tuple(np.round(coords[:, d], 12) for d in range(dim)))
    new = np.empty(n_total, dtype=np.int64)
    new[order] = np.arange(n_total)
    ed = new[ed]
    coords = coords[order]
    boundary = np.sort(new[boundary])
    free = np.setdiff1d(np.arange(n_total), boundary)
    return DofMap(n_total, ed, coords, boundary, free)


# ----------------------------------------------------------------------------
# assembly

@dataclass(frozen=True, eq=False)
class AssembledPencil:
    pencil: MatrixPencil
    dofmap: DofMap
    mesh: StructuredMesh
    basis: BasisSpec
    bc: str

    @property
    def n(self):
        return self.pencil.n

    @property
    def dofs(self):
        """Global dof index of each pencil row."""
        return self.dofmap.free if self.bc == "dirichlet" else np.arange(self.dofmap.n_total)

    def full_vector(self, coeffs):
        """Scatter pencil coefficients into all dofs (boundary = 0 for Dirichlet)."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[0] != self.n:
            raise DimensionMismatch(f"{coeffs.shape[0]} coefficients for {self.n} dofs")
        if self.bc != "dirichlet":
            return coeffs
        out = np.zeros((self.dofmap.n_total,) + coeffs.shape[1:])
        out[self.dofmap.free] = coeffs
        return out

    @cached_property
    def digest(self):
        h = hashlib.sha256(self.mesh.digest.encode())
        h.update(f"order={self.basis.order};bc={self.bc}".encode())
        return h.hexdigest()[:16]


def _element_matrices(mesh, basis):
    Kr, Mr = basis.reference_matrices
    _, size = mesh.boxes
    if mesh.dim == 1:
        h = size[:, 0]
        return (2.0 / h)[:, None, None] * Kr, (h / 2.0)[:, None, None] * Mr
    hx, hy = size[:, 0], size[:, 1]
    kx = np.kron(Mr, Kr)            # d/dx part, index j*(p+1)+i
    ky = np.kron(Kr, Mr)
    mm = np.kron(Mr, Mr)
    Ke = (hy / hx)[:, None, None] * kx + (hx / hy)[:, None, None] * ky
    Me = (hx * hy / 4.0)[:, None, None] * mm
    return Ke, Me


def _condensed_order(dm, dim, p, keep):
    """Element-interior dofs first, element by element, then the skeleton by RCM.

    Eliminating an element's interior only creates fill among that
    element's own dofs, so the factor's profile is set by the skeleton
    (vertex and edge dofs), which is much smaller at high order.
    """
    ed = dm.elem_dofs
    idx = np.arange(p + 1)
    inner = (idx > 0) & (idx < p)
    loc = inner if dim == 1 else np.outer(inner, inner).ravel()
    pos = np.full(dm.n_total, -1, dtype=np.int64)
    pos[keep] = np.arange(keep.size)
    interior = pos[ed[:, loc]].ravel()
    skel = np.ones(keep.size, dtype=bool)
    skel[interior] = False
    skel_ids = np.flatnonzero(skel)
    local = np.full(keep.size, -1, dtype=np.int64)
    local[skel_ids] = np.arange(skel_ids.size)
    sk = pos[ed[:, ~loc]]                      # -1 marks Dirichlet dofs
    es = np.where(sk >= 0, local[np.maximum(sk, 0)], -1)
    k = es.shape[1]
    r, c = np.repeat(es, k, axis=1).ravel(), np.tile(es, (1, k)).ravel()
    ok = (r >= 0) & (c >= 0)
    graph = sp.csr_matrix((np.ones(ok.sum()), (r[ok], c[ok])),
                          shape=(skel_ids.size, skel_ids.size))
    rcm = reverse_cuthill_mckee(graph, symmetric_mode=True)
    return np.concatenate([interior, skel_ids[rcm]])


def assemble(mesh, basis, bc="dirichlet", ordering="condensed"):
    """Assemble stiffness and mass, K_ij = <grad e_i, grad e_j>, M_ij = <e_i, e_j>.

    ``ordering`` is the elimination order used when factoring the pencil:
    ``"condensed"`` (element interiors first, skeleton by RCM), ``"rcm"``
    or ``"natural"``.
    """
    if isinstance(basis, int):
        basis = BasisSpec(basis)
    bc = bc.lower()
    if bc not in ("dirichlet", "neumann"):
        raise ValueError(f"unknown boundary condition {bc!r}")
    dm = _build_dofmap(mesh, basis.order)
    Ke, Me = _element_matrices(mesh, basis)
    ed = dm.elem_dofs
    nloc = ed.shape[1]
    rows = np.repeat(ed, nloc, axis=1).ravel()
    cols = np.tile(ed, (1, nloc)).ravel()
    shape = (dm.n_total, dm.n_total)
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=shape).tocsr()
    M = sp.coo_matrix((Me.ravel(), (rows, cols)), shape=shape).tocsr()
    if bc == "dirichlet":
        keep = dm.free
        K, M = K[keep][:, keep], M[keep][:, keep]
    K = 0.5 * (K + K.T)
    M = 0.5 * (M + M.T)
    if ordering == "condensed":
        keep = dm.free if bc == "dirichlet" else np.arange(dm.n_total)
        ordering = _condensed_order(dm, mesh.dim, basis.order, keep)
    pencil = MatrixPencil(SparseSymMatrix.from_scipy(K), SparseSymMatrix.from_scipy(M),
                          ordering=ordering)
    return AssembledPencil(pencil, dm, mesh, basis, bc)


# ----------------------------------------------------------------------------
# quadrature-based operations

def quadrature_points(ap, q=None):
    """Physical quadrature points and weights, plus basis tabulation.

    Returns ``(points, weights, B)`` with ``points`` of shape (ne, nq, dim),
    ``weights`` (ne, nq) including the Jacobian, and ``B`` (nq, nloc).
    """
    mesh, basis = ap.mesh, ap.basis
    xq, wq = basis.quadrature(q)
    val, _ = lagrange_tabulate(basis.nodes, xq)
    lo, size = mesh.boxes
    ref = (xq + 1.0) / 2.0
    if mesh.dim == 1:
        pts = (lo[:, :1] + size[:, :1] * ref)[..., None]
        w = (size[:, 0] / 2.0)[:, None] * wq
        return pts, w, val
    nq = xq.size
    qx = np.tile(np.arange(nq), nq)              # x fastest, as for dofs
    qy = np.repeat(np.arange(nq), nq)
    pts = np.stack([lo[:, 0, None] + size[:, 0, None] * ref[qx],
                    lo[:, 1, None] + size[:, 1, None] * ref[qy]], axis=-1)
    w = (size[:, 0] * size[:, 1] / 4.0)[:, None] * (wq[qx] * wq[qy])
    B = np.einsum("qj,qi->qji", val[qy], val[qx]).reshape(nq * nq, -1)
    return pts, w, B


def _call(f, pts):
    vals = f(*np.moveaxis(pts, -1, 0))
    return np.broadcast_to(np.asarray(vals, dtype=float), pts.shape[:-1])


def load_vector(f, ap, q=None):
    """b_i = integral of f * e_i over the domain, restricted to pencil dofs."""
    pts, w, B = quadrature_points(ap, q)
    fw = _call(f, pts) * w                                  # (ne, nq)
    local = fw @ B                                          # (ne, nloc)
    b = np.bincount(ap.dofmap.elem_dofs.ravel(), weights=local.ravel(),
                    minlength=ap.dofmap.n_total)
    return b[ap.dofs]


def project(f, ap):
    """L2 projection of the field ``f`` onto the discrete space (solves M c = b)."""
    return ap.pencil.mass_solve(load_vector(f, ap))


def inner_product(u, v, ap):
    """Discrete L2 inner product u^T M v."""
    pencil = ap.pencil if isinstance(ap, AssembledPencil) else ap
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape[0] != pencil.n or v.shape[0] != pencil.n:
        raise DimensionMismatch("coefficient vectors do not match the pencil")
    return float(u @ spmv(pencil.mass, v))


def _locate(mesh, points, tol=1e-12):
    lo, size = mesh.boxes
    hi = lo + size
    elem = np.full(points.shape[0], -1, dtype=np.int64)
    span = np.asarray([b[1] - b[0] for b in mesh.bounds])
    if mesh.elements_per_side is not None:
        n = mesh.elements_per_side
        origin = np.asarray([b[0] for b in mesh.bounds])
        idx = np.floor((points - origin) / span * n).astype(np.int64)
        idx = np.clip(idx, 0, n - 1)
        elem = idx[:, 0] if mesh.dim == 1 else idx[:, 1] * n + idx[:, 0]
    else:
        for e in range(mesh.n_elements):
            todo = elem < 0
            if not todo.any():
                break
            inside = np.all((points >= lo[e] - tol * span) & (points <= hi[e] + tol * span), axis=1)
            elem[todo & inside] = e
    inside = np.all((points >= lo[elem] - tol * span) & (points <= hi[elem] + tol * span), axis=1)
    if not np.all(inside & (elem >= 0)):
        bad = np.flatnonzero(~inside | (elem < 0))[0]
        raise MeshError(f"point {points[bad]} lies outside the domain")
    return elem


def evaluate(coeffs, ap, points):
    """Evaluate the finite element field at ``points`` (shape (npts,) or (npts, dim))."""
    mesh, p = ap.mesh, ap.basis.order
    pts = np.asarray(points, dtype=float)
    pts = pts.reshape(-1, mesh.dim)
    full = ap.full_vector(coeffs)
    elem = _locate(mesh, pts)
    lo, size = mesh.boxes
    xi = 2.0 * (pts - lo[elem]) / size[elem] - 1.0
    vx, _ = lagrange_tabulate(ap.basis.nodes, xi[:, 0])
    if mesh.dim == 1:
        phi = vx
    else:
        vy, _ = lagrange_tabulate(ap.basis.nodes, xi[:, 1])
        phi = (vy[:, :, None] * vx[:, None, :]).reshape(pts.shape[0], (p + 1) ** 2)
    local = full[ap.dofmap.elem_dofs[elem]]
    if local.ndim == 2:
        return np.einsum("kl,kl->k", local, phi)
    return np.einsum("klc,kl->kc", local, phi)


def error_norm(u, exact, ap, q=None):
    """L2 norm of (field(u) - exact) over the domain, by Gauss quadrature."""
    q = q or ap.basis.q + 2
    pts, w, B = quadrature_points(ap, q)
    full = ap.full_vector(u)
    uq = full[ap.dofmap.elem_dofs] @ B.T                     # (ne, nq)
    d = uq - _call(exact, pts)
    return float(np.sqrt(np.sum(w * d * d)))
