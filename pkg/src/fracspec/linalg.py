"""Sparse symmetric storage, shifted LDL^T with inertia, and a dense oracle.

Matrices are kept as the upper triangle (diagonal included) in CSR form;
products apply both triangles.  ``ldlt_factor`` factors ``K - a*M``
without pivoting, so the signs of ``D`` give the inertia of the shifted
pencil directly (Sylvester).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from . import _kernels
from .errors import DimensionMismatch, MassNotSPD, SingularFactor, ZeroPivot

#: pivots with |D_kk| <= ZERO_PIVOT_REL * max|D| so far are treated as zero
ZERO_PIVOT_REL = 1e-12
ORACLE_CAP = 4000


class FactorizationCounter:
    """Thread-safe tally of numeric factorizations (instrumentation only)."""

    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0
        self.mass = 0

    def bump(self, mass=False):
        with self._lock:
            if mass:
                self.mass += 1
            else:
                self.count += 1

    @property
    def total(self):
        return self.count + self.mass

    def reset(self):
        with self._lock:
            self.count = 0
            self.mass = 0


factorizations = FactorizationCounter()


class SparseSymMatrix:
    """Symmetric sparse matrix stored as its upper triangle in CSR arrays."""

    __slots__ = ("n", "row_offsets", "col_indices", "values", "__weakref__")

    def __init__(self, n, row_offsets, col_indices, values, check=True):
        self.n = int(n)
        self.row_offsets = np.ascontiguousarray(row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(col_indices, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        for a in (self.row_offsets, self.col_indices, self.values):
            a.setflags(write=False)
        if check:
            self._check()

    def _check(self):
        ro, ci = self.row_offsets, self.col_indices
        if ro.shape != (self.n + 1,) or ro[0] != 0 or np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be nondecreasing with length n+1")
        if ro[-1] != ci.size or ci.size != self.values.size:
            raise ValueError("CSR array lengths disagree")
        rows = np.repeat(np.arange(self.n), np.diff(ro))
        if np.any(ci < rows) or np.any(ci >= self.n):
            raise ValueError("only upper-triangle columns in [row, n) may be stored")
        same_row = rows[1:] == rows[:-1]
        if np.any(np.diff(ci)[same_row] <= 0):
            raise ValueError("column indices must strictly increase within a row")

    @classmethod
    def from_scipy(cls, A):
        """Build from any scipy sparse (or dense) symmetric matrix; keeps triu."""
        U = sp.triu(sp.csr_matrix(A), format="csr")
        U.sum_duplicates()
        U.sort_indices()
        return cls(U.shape[0], U.indptr, U.indices, U.data)

    @classmethod
    def from_dense(cls, A):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch("square matrix required")
        return cls.from_scipy(sp.csr_matrix(np.triu(A)))

    @classmethod
    def identity(cls, n):
        return cls(n, np.arange(n + 1), np.arange(n), np.ones(n))

    @classmethod
    def diag(cls, d):
        d = np.asarray(d, dtype=float)
        n = d.size
        return cls(n, np.arange(n + 1), np.arange(n), d)

    @property
    def nnz(self):
        return self.values.size

    @property
    def shape(self):
        return (self.n, self.n)

    def upper(self):
        """Upper triangle as a scipy CSR matrix."""
        return sp.csr_matrix((self.values, self.col_indices, self.row_offsets),
                             shape=self.shape)

    def to_scipy(self):
        """Full symmetric matrix as scipy CSR."""
        U = self.upper()
        return (U + sp.triu(U, 1).T).tocsr()

    def to_dense(self):
        return self.to_scipy().toarray()

    def diagonal(self):
        return self.upper().diagonal()

    def norm1(self):
        return float(abs(self.to_scipy()).sum(axis=0).max()) if self.n else 0.0

    def __matmul__(self, x):
        return spmv(self, x)

    def dump(self):
        """Debug text: ``n nnz`` header then sorted ``row col value`` triples."""
        rows = np.repeat(np.arange(self.n), np.diff(self.row_offsets))
        lines = [f"{self.n} {self.nnz}"]
        lines += [f"{r} {c} {v:.17g}"
                  for r, c, v in zip(rows, self.col_indices, self.values)]
        return "\n".join(lines) + "\n"

    @classmethod
    def load_dump(cls, text):
        lines = text.strip().splitlines()
        n, nnz = (int(t) for t in lines[0].split())
        if nnz == 0:
            return cls(n, np.zeros(n + 1), [], [])
        tri = np.array([ln.split() for ln in lines[1:1 + nnz]], dtype=float)
        if tri.shape[0] != nnz:
            raise ValueError("truncated matrix dump")
        r, c = tri[:, 0].astype(np.int64), tri[:, 1].astype(np.int64)
        return cls.from_scipy(sp.coo_matrix((tri[:, 2], (r, c)), shape=(n, n)))


def spmv(A, x):
    """Full symmetric product ``A @ x`` from the upper-triangle storage."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != A.n:
        raise DimensionMismatch(f"vector of length {x.shape[0]} for n={A.n}")
    if x.ndim == 1:
        y = np.empty(A.n)
        _kernels.spmv_upper(A.n, A.row_offsets, A.col_indices, A.values,
                            np.ascontiguousarray(x), y)
        return y
    y = np.empty(x.shape)
    _kernels.spmm_upper(A.n, A.row_offsets, A.col_indices, A.values,
                        np.ascontiguousarray(x), y)
    return y


@dataclass(frozen=True)
class _Symbolic:
    """Pattern-only analysis of K - aM under a fixed ordering."""

    perm: np.ndarray          # new -> old
    Ap: np.ndarray            # lower CSR of the permuted union pattern
    Ai: np.ndarray
    src: np.ndarray           # union entry feeding each lower entry
    parent: np.ndarray
    Lp: np.ndarray

    @property
    def nnz_L(self):
        return int(self.Lp[-1])


class MatrixPencil:
    """The pair (K, M) of a symmetric-definite generalized eigenproblem.

    ``ordering`` selects the fill-reducing preorder used by every
    factorization of this pencil: ``"natural"``, ``"rcm"``, or an explicit
    permutation (new position -> original index).
    """

    def __init__(self, stiffness, mass, ordering="natural", check_mass=False):
        if stiffness.n != mass.n:
            raise DimensionMismatch("K and M must have the same dimension")
        if isinstance(ordering, str):
            if ordering not in ("natural", "rcm"):
                raise ValueError(f"unknown ordering {ordering!r}")
        else:
            ordering = np.asarray(ordering, dtype=np.int64)
            if not np.array_equal(np.sort(ordering), np.arange(stiffness.n)):
                raise ValueError("ordering must be 'natural', 'rcm' or a permutation")
        self.stiffness = stiffness
        self.mass = mass
        self.ordering = ordering
        self._lock = threading.Lock()
        self._mass_factor = None
        if check_mass:
            self.mass_factor()

    @property
    def n(self):
        return self.stiffness.n

    @property
    def K(self):
        return self.stiffness

    @property
    def M(self):
        return self.mass

    @cached_property
    def _union(self):
        Ku, Mu = self.stiffness.upper(), self.mass.upper()
        ones = [sp.csr_matrix((np.ones(U.nnz), U.indices, U.indptr), shape=U.shape)
                for U in (Ku, Mu)]
        pat = (ones[0] + ones[1]).tocsr()
        pat.sum_duplicates()
        pat.sort_indices()
        n = self.n
        rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(pat.indptr))
        keys = rows * n + pat.indices

        def scatter(U):
            r = np.repeat(np.arange(n, dtype=np.int64), np.diff(U.indptr))
            pos = np.searchsorted(keys, r * n + U.indices)
            out = np.zeros(keys.size)
            np.add.at(out, pos, U.data)
            return out

        return rows, pat.indices.astype(np.int64), scatter(Ku), scatter(Mu)

    @cached_property
    def _symbolic(self):
        rows, cols, _, _ = self._union
        n = self.n
        if not isinstance(self.ordering, str):
            perm = self.ordering
        elif self.ordering == "rcm":
            full = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
            full = (full + full.T).tocsr()
            perm = np.asarray(reverse_cuthill_mckee(full, symmetric_mode=True),
                              dtype=np.int64)
        else:
            perm = np.arange(n, dtype=np.int64)
        iperm = np.empty(n, dtype=np.int64)
        iperm[perm] = np.arange(n)
        r, c = iperm[rows], iperm[cols]
        lo_row, lo_col = np.maximum(r, c), np.minimum(r, c)
        src = np.lexsort((lo_col, lo_row))
        Ap = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(lo_row, minlength=n), out=Ap[1:])
        Ai = np.ascontiguousarray(lo_col[src])
        parent, Lp = _kernels.ldl_symbolic(n, Ap, Ai)
        return _Symbolic(perm, Ap, Ai, src, parent, Lp)

    def shifted_values(self, a):
        _, _, kv, mv = self._union
        return kv - a * mv

    def shifted(self, a):
        """``K - a*M`` as a SparseSymMatrix (for tests and debugging)."""
        rows, cols, kv, mv = self._union
        U = sp.csr_matrix((kv - a * mv, (rows, cols)), shape=(self.n, self.n))
        return SparseSymMatrix.from_scipy(U)

    def mass_factor(self):
        """LDL^T of M, computed once per pencil; raises MassNotSPD."""
        with self._lock:
            if self._mass_factor is None:
                _, _, _, mv = self._union
                try:
                    f = _factor(self, mv, shift=None, count_as_mass=True)
                except ZeroPivot as exc:
                    raise MassNotSPD(f"mass matrix singular at row {exc.row}") from None
                if f.inertia[0] or f.inertia[1]:
                    raise MassNotSPD("mass matrix is not positive definite")
                self._mass_factor = f
            return self._mass_factor

    def mass_solve(self, b):
        return self.mass_factor().solve(b)

    @cached_property
    def norms1(self):
        """(||K||_1, ||M||_1), used to scale residual tolerances."""
        return self.stiffness.norm1(), self.mass.norm1()


@dataclass(frozen=True, eq=False)
class LdltFactorization:
    """``P (K - aM) P^T = L D L^T`` with unit lower L stored by columns."""

    n: int
    perm: np.ndarray
    Lp: np.ndarray
    Li: np.ndarray
    Lx: np.ndarray
    D: np.ndarray
    shift: float | None
    inertia: tuple = field(default=(0, 0, 0))

    @property
    def n_negative(self):
        return self.inertia[0]

    @property
    def n_zero(self):
        return self.inertia[1]

    @property
    def n_positive(self):
        return self.inertia[2]

    def solve(self, b):
        return solve_factored(self, b)

    def L_dense(self):
        L = np.eye(self.n)
        cols = np.repeat(np.arange(self.n), np.diff(self.Lp))
        L[self.Li, cols] = self.Lx
        return L

    def reconstruct(self):
        """Dense ``L D L^T`` mapped back to the original ordering."""
        L = self.L_dense()
        A = (L * self.D) @ L.T
        out = np.empty_like(A)
        out[np.ix_(self.perm, self.perm)] = A
        return out

    # half-solves for the symmetric form G^{-1} K G^{-T}, with M = G G^T
    def lower_solve(self, b):
        """``D^{-1/2} L^{-1} P b``."""
        x, vec = _as_block(np.asarray(b, dtype=np.float64)[self.perm])
        _kernels.ldl_lower_solve(self.n, self.Lp, self.Li, self.Lx, x)
        x /= np.sqrt(self.D)[:, None]
        return x[:, 0] if vec else x

    def upper_solve(self, y):
        """``P^T L^{-T} D^{-1/2} y`` (adjoint of :meth:`lower_solve`)."""
        x, vec = _as_block(np.array(y, dtype=np.float64))
        x /= np.sqrt(self.D)[:, None]
        _kernels.ldl_upper_solve(self.n, self.Lp, self.Li, self.Lx, x)
        out = np.empty_like(x)
        out[self.perm] = x
        return out[:, 0] if vec else out


def _as_block(x):
    if x.ndim == 1:
        return np.ascontiguousarray(x[:, None]), True
    return np.ascontiguousarray(x), False


def _factor(pencil, values, shift, count_as_mass=False):
    sym = pencil._symbolic
    n = pencil.n
    Ax = np.ascontiguousarray(values[sym.src])
    Li = np.empty(sym.nnz_L, dtype=np.int64)
    Lx = np.empty(sym.nnz_L)
    D = np.zeros(n)
    info = _kernels.ldl_numeric(n, sym.Ap, sym.Ai, Ax, sym.Lp, sym.parent,
                                Li, Lx, D, ZERO_PIVOT_REL)
    factorizations.bump(mass=count_as_mass)
    if info >= 0:
        raise ZeroPivot(int(sym.perm[info]), shift)
    inertia = (int(np.sum(D < 0)), 0, int(np.sum(D > 0)))
    return LdltFactorization(n, sym.perm, sym.Lp, Li, Lx, D, shift, inertia)


def ldlt_factor(pencil, a):
    """Factor ``K - a*M`` without pivoting and read off its inertia.

    Raises
    ------
    ZeroPivot
        When a pivot is numerically zero, i.e. ``a`` coincides with an
        eigenvalue to working precision.  Perturb the shift and retry.
    """
    return _factor(pencil, pencil.shifted_values(float(a)), float(a))


def solve_factored(f, b):
    """Solve ``(K - aM) x = b`` with an existing factorization (b may be 2-D)."""
    if f.n_zero:
        raise SingularFactor("factorization has zero pivots")
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != f.n:
        raise DimensionMismatch(f"rhs of length {b.shape[0]} for n={f.n}")
    x = np.ascontiguousarray(b[f.perm])
    if x.ndim == 1:
        _kernels.ldl_solve_vec(f.n, f.Lp, f.Li, f.Lx, f.D, x)
    else:
        _kernels.ldl_solve_inplace(f.n, f.Lp, f.Li, f.Lx, f.D, x)
    out = np.empty_like(x)
    out[f.perm] = x
    return out


def dense_generalized_eig(pencil, method="lapack", cap=ORACLE_CAP):
    """Full spectrum of ``K phi = theta M phi`` by dense reduction.

    M = C C^T (dense Cholesky), then the standard problem
    ``C^{-1} K C^{-T}`` is diagonalized either by LAPACK (``"lapack"``)
    or by cyclic Jacobi sweeps (``"jacobi"``).  Eigenvectors come back
    M-orthonormal, eigenvalues ascending.
    """
    n = pencil.n
    if n > cap:
        raise ValueError(f"dense oracle capped at n={cap} (got {n})")
    K = pencil.stiffness.to_dense()
    M = pencil.mass.to_dense()
    try:
        C = scipy.linalg.cholesky(M, lower=True)
    except np.linalg.LinAlgError:
        raise MassNotSPD("dense Cholesky of M failed") from None
    Y = scipy.linalg.solve_triangular(C, K, lower=True)
    A = scipy.linalg.solve_triangular(C, Y.T, lower=True)
    A = 0.5 * (A + A.T)
    if method == "lapack":
        w, Z = scipy.linalg.eigh(A)
    elif method == "jacobi":
        w, Z, _ = _kernels.jacobi_eigh(A, 1e-15, 100)
        order = np.argsort(w, kind="stable")
        w, Z = w[order], Z[:, order]
    else:
        raise ValueError(f"unknown method {method!r}")
    V = scipy.linalg.solve_triangular(C, Z, lower=True, trans="T")
    return w, V


def random_pencil(n, density=0.05, seed=0, spread=1.0):
    """Random sparse symmetric K (PSD) and SPD M with distinct eigenvalues."""
    rng = np.random.default_rng(seed)
    B = sp.random(n, n, density=density, random_state=rng, format="csr")
    K = (B @ B.T) * spread + sp.diags(rng.uniform(0.1, 1.0, n))
    C = sp.random(n, n, density=min(density, 0.02), random_state=rng)
    M = sp.diags(rng.uniform(1.0, 2.0, n)) + 0.1 * (C + C.T)
    M = M + sp.diags(np.asarray(abs(0.1 * (C + C.T)).sum(axis=1)).ravel())
    return MatrixPencil(SparseSymMatrix.from_scipy(K), SparseSymMatrix.from_scipy(M))
