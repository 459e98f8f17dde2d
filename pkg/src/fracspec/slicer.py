"""Spectrum slicing: every slice of a partition plan is solved on its own.

A slice ``[lo, hi)`` is handled by block Lanczos on the shift-invert
operator ``S = (K - aM)^{-1} M`` (``a`` the slice midpoint) in the
M-inner product, with full reorthogonalization and thick restarts.
Eigenvalues map back through ``theta = a + 1/nu``.  The plan's inertia
counts say exactly how many pairs each slice must deliver, so
completeness is checked rather than hoped for.
"""

from __future__ import annotations

import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np


from .counting import count_geq_with_shift
from .errors import (
    BasisMismatch, RankDeficientCluster, SliceIncomplete, ZeroPivot,
)
from .linalg import ldlt_factor, spmv

__all__ = [
    "SliceTask", "EigenPair", "EigenBasis", "EvaluatorPool", "SolverOptions",
    "solve_slice", "solve_all", "postprocess", "compute_eigenbasis",
]

PHASES = ("spectral_radius", "partition", "solve", "postprocess")


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of the slice solver.

    ``ritz_tol`` is the relative Ritz residual ``||S x - nu x||_M / |nu|``
    accepted as converged; ``residual_tol`` scales the final check
    ``||K x - theta M x|| <= residual_tol (||K||_1 + |theta| ||M||_1) ||x||``.
    """

    ritz_tol: float = 1e-10
    residual_tol: float = 1e-8
    block: int = 8
    max_restarts: int = 40
    max_slice_count: int = 256
    max_depth: int = 8
    cluster_tol: float = 1e-8
    seed: int = 0


@dataclass(frozen=True)
class SliceTask:
    lo: float
    hi: float
    expected_count: int
    index: int = 0

    def __post_init__(self):
        if self.expected_count < 0:
            raise ValueError("expected_count must be nonnegative")
        if not self.lo < self.hi:
            raise ValueError("slice needs lo < hi")

    @property
    def shift(self):
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True, eq=False)
class EigenPair:
    value: float
    vector: np.ndarray
    residual: float


@dataclass
class _SliceStats:
    factorizations: int = 0
    block_solves: int = 0
    restarts: int = 0
    bisections: int = 0
    seconds: float = 0.0

    def add(self, other):
        self.factorizations += other.factorizations
        self.block_solves += other.block_solves
        self.restarts += other.restarts
        self.bisections += other.bisections


# ----------------------------------------------------------------------------
# block Lanczos on one slice

def _slice_rng(seed, lo, hi):
    bits = np.array([lo, hi], dtype=np.float64).view(np.uint64)
    return np.random.default_rng([seed, int(bits[0]), int(bits[1])])


class _Krylov:
    """Basis storage with V, M V and the projected matrix H = V^T M S V."""

    def __init__(self, pencil, factor, capacity):
        self.pencil = pencil
        self.factor = factor
        n = pencil.n
        self.V = np.empty((n, capacity), order="F")
        self.MV = np.empty((n, capacity), order="F")
        self.H = np.zeros((capacity, capacity))
        self.nb = 0                  # columns in the basis
        self.last = 0                # start of the unexpanded block
        self.beta = None

    def orthogonalize(self, W, upto):
        """Two passes of block classical Gram-Schmidt in the M-inner product."""
        h = np.zeros((upto, W.shape[1]))
        if upto:
            for _ in range(2):
                c = self.MV[:, :upto].T @ W
                W -= self.V[:, :upto] @ c
                h += c
        return W, h

    def append(self, W, rng, width=None):
        """M-orthonormalize W (already orthogonal to the basis) and append it.

        Column-wise Gram-Schmidt with reorthogonalization, stable even when
        the block is badly conditioned (a shift sitting on an eigenvalue).
        ``M w`` is carried along linearly and recomputed only after heavy
        cancellation.  Returns beta (width x cols) with ``W ~= Q beta``;
        columns that turn out dependent are replaced by random directions
        with zero rows.
        """
        n = self.pencil.n
        M = self.pencil.mass
        b = W.shape[1]
        width = b if width is None else width
        j = self.nb
        beta = np.zeros((width, b))
        MW = spmv(M, W)
        r = 0
        for i in range(b):
            w, Mw = np.array(W[:, i]), MW[:, i]
            n0 = np.sqrt(abs(w @ Mw))
            for _ in range(2):
                if r:
                    c = self.MV[:, j:j + r].T @ w
                    w -= self.V[:, j:j + r] @ c
                    Mw -= self.MV[:, j:j + r] @ c
                    beta[:r, i] += c
            nw = np.sqrt(abs(w @ Mw))
            if nw < 0.1 * n0:
                # heavy cancellation magnifies what is left along the basis
                # and the rounding in the carried M w
                if j:
                    w -= self.V[:, :j] @ (self.MV[:, :j].T @ w)
                if r:
                    c = self.MV[:, j:j + r].T @ w
                    w -= self.V[:, j:j + r] @ c
                    beta[:r, i] += c
                Mw = spmv(M, w)
                nw = np.sqrt(abs(w @ Mw))
            if r < width and nw > 1e-13 * n0 and nw > 0:
                self.V[:, j + r] = w / nw
                self.MV[:, j + r] = Mw / nw
                beta[r, i] = nw
                r += 1
        while r < width:
            w = rng.standard_normal(n)
            for _ in range(2):
                w -= self.V[:, :j + r] @ (self.MV[:, :j + r].T @ w)
            Mw = spmv(M, w)
            nw = np.sqrt(abs(w @ Mw))
            self.V[:, j + r] = w / nw
            self.MV[:, j + r] = Mw / nw
            r += 1
        self.nb += width
        return beta

    def expand(self, rng):
        """Apply S to the unexpanded block and add the new block."""
        j0, j1 = self.last, self.nb
        W = self.factor.solve(self.MV[:, j0:j1])
        W, h = self.orthogonalize(np.asfortranarray(W), j1)
        h[j0:j1] = 0.5 * (h[j0:j1] + h[j0:j1].T)
        self.H[:j1, j0:j1] = h
        self.H[j0:j1, :j1] = h.T
        self.last = j1
        b = min(j1 - j0, self.pencil.n - j1, self.V.shape[1] - j1)
        if b <= 0:
            self.beta = np.zeros((0, j1 - j0))
            return
        beta = self.append(W, rng, width=b)
        self.beta = beta
        self.H[j1:j1 + b, j0:j1] = beta
        self.H[j0:j1, j1:j1 + b] = beta.T

    def ritz(self):
        """Ritz values/vectors of the expanded part and their residual norms."""
        m = self.last
        nu, Y = np.linalg.eigh(self.H[:m, :m])
        lastblk = Y[self.last_block_start:m]
        res = np.linalg.norm(self.beta @ lastblk, axis=0) if self.beta.size else np.zeros(m)
        return nu, Y, res

    @property
    def last_block_start(self):
        return self._prev

    def restart(self, Y, keep):
        """Thick restart: keep the selected Ritz vectors plus the residual block."""
        m = self.last
        k = len(keep)
        Yk = Y[:, keep]
        Vk = self.V[:, :m] @ Yk
        MVk = self.MV[:, :m] @ Yk
        b = self.nb - m
        coupling = self.beta @ Y[self._prev:m][:, keep] if b else np.zeros((0, k))
        Q, MQ = self.V[:, m:m + b].copy(), self.MV[:, m:m + b].copy()
        theta = np.einsum("ik,ik->k", Yk, self.H[:m, :m] @ Yk)
        self.V[:, :k] = Vk
        self.MV[:, :k] = MVk
        self.V[:, k:k + b] = Q
        self.MV[:, k:k + b] = MQ
        self.H[:] = 0.0
        self.H[np.arange(k), np.arange(k)] = theta
        self.H[k:k + b, :k] = coupling
        self.H[:k, k:k + b] = coupling.T
        self.nb = k + b
        self.last = k
        self._prev = 0


def _lanczos(pencil, factor, lo, hi, expected, opts, rng, stats):
    """Return (values, vectors) of exactly ``expected`` pairs in [lo, hi) or None."""
    n = pencil.n
    a = factor.shift
    m = min(n, max(2 * expected + 16, 32))
    b = max(2, min(opts.block, m // 4))
    kry = _Krylov(pencil, factor, min(m, n) + 2 * b)
    kry._prev = 0
    kry.append(rng.standard_normal((n, b)), rng)
    m_eff = min(m, n)
    for _ in range(opts.max_restarts + 1):
        while kry.last < m_eff and kry.nb > kry.last:
            kry._prev = kry.last
            kry.expand(rng)
            stats.block_solves += 1
        nu, Y, res = kry.ritz()
        with np.errstate(divide="ignore"):
            theta = a + 1.0 / nu
        inside = (theta >= lo) & (theta < hi) & (nu != 0)
        exhausted = kry.last >= n or kry.beta.size == 0
        conv = np.ones_like(inside) if exhausted else res <= opts.ritz_tol * np.abs(nu)
        sel = _accept(theta, conv, lo, hi, expected)
        if sel is None and exhausted and inside.sum() >= expected:
            sel = np.flatnonzero(inside)
        if sel is not None:
            return theta[sel], kry.V[:, :kry.last] @ Y[:, sel]
        if exhausted:
            return None
        # keep the wanted end of the spectrum of S plus a buffer
        order = np.argsort(-np.abs(nu))
        k = min(max(expected + b, kry.last // 2), kry.last - b)
        stats.restarts += 1
        kry.restart(Y, np.sort(order[:max(k, 1)]))
    return None


def _accept(theta, conv, lo, hi, expected):
    """Indices of the converged pairs that make up the slice, or None.

    Inertia counts are exact, so ``expected`` converged values in
    ``[lo, hi)`` is everything.  A value within round-off of an end point
    may fall on the wrong side of the test; such values are decided by
    the count.
    """
    inside = conv & (theta >= lo) & (theta < hi)
    if inside.sum() == expected:
        return np.flatnonzero(inside)
    delta = 1e-10 * max(abs(lo), abs(hi), 1.0)
    sure = conv & (theta >= lo + delta) & (theta < hi - delta)
    near = conv & ~sure & (theta >= lo - delta) & (theta < hi + delta)
    if sure.sum() == expected:
        return np.flatnonzero(sure)
    if sure.sum() + near.sum() == expected:
        return np.flatnonzero(sure | near)
    return None


def _factor_at(pencil, a, width, stats):
    # a shift on top of an eigenvalue blows up S; move well inside the slice
    for offset in (0.0, 0.0137, -0.0291, 0.0613):
        try:
            stats.factorizations += 1
            return ldlt_factor(pencil, a + offset * width)
        except ZeroPivot:
            continue
    raise ZeroPivot(-1, a)


def _true_residuals(pencil, values, X):
    KX = spmv(pencil.stiffness, X)
    MX = spmv(pencil.mass, X)
    return np.linalg.norm(KX - MX * values, axis=0)


def _solve_range(pencil, lo, hi, expected, opts, stats, depth, geq_lo=None, geq_hi=None):
    if expected == 0:
        return np.empty(0), np.empty((pencil.n, 0))
    if expected > opts.max_slice_count and depth < opts.max_depth:
        return _bisect(pencil, lo, hi, expected, opts, stats, depth, geq_lo, geq_hi)
    factor = _factor_at(pencil, 0.5 * (lo + hi), hi - lo, stats)
    rng = _slice_rng(opts.seed, lo, hi)
    out = _lanczos(pencil, factor, lo, hi, expected, opts, rng, stats)
    if out is not None and out[0].size == expected:
        return out
    if depth < opts.max_depth:
        return _bisect(pencil, lo, hi, expected, opts, stats, depth, geq_lo, geq_hi)
    found = 0 if out is None else out[0].size
    raise SliceIncomplete(found, expected, (lo, hi))


def _bisect(pencil, lo, hi, expected, opts, stats, depth, geq_lo, geq_hi):
    rho = getattr(pencil, "spectral_radius", None) or hi
    if geq_lo is None:
        geq_lo, lo = count_geq_with_shift(pencil, lo, rho)
        stats.factorizations += 1
    if geq_hi is None:
        geq_hi, hi = count_geq_with_shift(pencil, hi, rho)
        stats.factorizations += 1
    gm, mid = count_geq_with_shift(pencil, 0.5 * (lo + hi), rho)
    stats.factorizations += 1
    stats.bisections += 1
    left = geq_lo - gm
    v1, x1 = _solve_range(pencil, lo, mid, left, opts, stats, depth + 1, geq_lo, gm)
    v2, x2 = _solve_range(pencil, mid, hi, expected - left, opts, stats, depth + 1, gm, geq_hi)
    return np.concatenate([v1, v2]), np.hstack([x1, x2])


def _solve_task(pencil, task, opts, geq_lo=None, geq_hi=None):
    stats = _SliceStats()
    t0 = time.perf_counter()
    vals, X = _solve_range(pencil, task.lo, task.hi, task.expected_count, opts, stats, 0,
                           geq_lo, geq_hi)
    if vals.size:
        MX = spmv(pencil.mass, X)
        mx = np.einsum("ij,ij->j", X, MX)
        # Rayleigh quotients: eigenvalue error goes with the square of the vector error
        vals = np.einsum("ij,ij->j", X, spmv(pencil.stiffness, X)) / mx
        X = X / np.sqrt(mx)
    order = np.argsort(vals, kind="stable")
    vals, X = vals[order], X[:, order]
    res = _true_residuals(pencil, vals, X)
    stats.seconds = time.perf_counter() - t0
    return vals, np.asfortranarray(X), res, stats


def solve_slice(pencil, task, options=None):
    """All eigenpairs with eigenvalue in ``[task.lo, task.hi)``.

    Raises SliceIncomplete when the expected number cannot be produced
    within the restart and bisection caps.
    """
    opts = options or SolverOptions()
    vals, X, res, _ = _solve_task(pencil, task, opts)
    return [EigenPair(float(v), X[:, i].copy(), float(r)) for i, (v, r) in enumerate(zip(vals, res))]


# ----------------------------------------------------------------------------
# the whole spectrum

def default_workers(P):
    cap = os.environ.get("FRACSPEC_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(P, limit))


class EvaluatorPool:
    """Runs slice tasks on ``P`` evaluator threads; each task runs exactly once."""

    def __init__(self, P, max_workers=None):
        self.P = int(P)
        self.workers = max_workers or default_workers(self.P)
        self.log = []
        self._lock = threading.Lock()
        self._executor = None

    def __enter__(self):
        self._executor = ThreadPoolExecutor(self.workers, thread_name_prefix="evaluator")
        return self

    def __exit__(self, *exc):
        self._executor.shutdown(wait=True)
        self._executor = None

    @property
    def executor(self):
        return self._executor

    def run(self, fn, tasks):
        own = self._executor is None
        if own:
            self.__enter__()
        try:
            def wrapped(task):
                t0 = time.perf_counter()
                out = fn(task)
                with self._lock:
                    self.log.append((task.index, threading.current_thread().name,
                                     time.perf_counter() - t0))
                return out
            return list(self._executor.map(wrapped, tasks))
        finally:
            if own:
                self.__exit__(None, None, None)


@dataclass(eq=False)
class EigenBasis:
    """Ascending eigenvalues with M-orthonormal eigenvectors (columns)."""

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    pencil: object = None
    meta: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def count(self):
        return self.values.size

    @property
    def n(self):
        return self.vectors.shape[0]

    def __len__(self):
        return self.count

    def orthonormality_error(self, pencil=None, sample=None, seed=0):
        """max |phi_i^T M phi_j - delta_ij| over all (or ``sample`` random) columns."""
        pencil = pencil or self.pencil
        cols = np.arange(self.count)
        if sample is not None and sample < self.count:
            cols = np.sort(np.random.default_rng(seed).choice(self.count, sample, replace=False))
        MS = spmv(pencil.mass, np.ascontiguousarray(self.vectors[:, cols]))
        G = MS.T @ self.vectors                       # |S| x count
        G[np.arange(cols.size), cols] -= 1.0
        return float(np.abs(G).max()) if G.size else 0.0

    def scaled_residuals(self, pencil=None):
        pencil = pencil or self.pencil
        nk, nm = pencil.norms1
        return self.residuals / (nk + np.abs(self.values) * nm)

    # persistence -----------------------------------------------------------
    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        np.savetxt(os.path.join(directory, "eigenvalues.txt"), self.values, fmt="%.16e")
        with open(os.path.join(directory, "eigenvectors.bin"), "wb") as fh:
            # column-major N x count: each eigenvector contiguous
            np.asfortranarray(self.vectors, dtype="<f8").T.tofile(fh)
        meta = dict(self.meta)
        meta.update(N=int(self.n), count=int(self.count),
                    max_scaled_residual=float(self.scaled_residuals().max())
                    if self.pencil is not None and self.count else None)
        with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        np.savetxt(os.path.join(directory, "residuals.txt"), self.residuals, fmt="%.6e")

    @classmethod
    def load(cls, directory, pencil=None, digest=None, check_sample=64):
        """Read a saved basis and validate it before handing it out."""
        with open(os.path.join(directory, "meta.json"), encoding="utf-8") as fh:
            meta = json.load(fh)
        n, count = int(meta["N"]), int(meta["count"])
        values = np.atleast_1d(np.loadtxt(os.path.join(directory, "eigenvalues.txt")))
        if values.size != count or np.any(np.diff(values) < 0):
            raise BasisMismatch("eigenvalues.txt is inconsistent with meta.json")
        raw = np.fromfile(os.path.join(directory, "eigenvectors.bin"), dtype="<f8")
        if raw.size != n * count:
            raise BasisMismatch("eigenvectors.bin has the wrong size")
        vectors = raw.reshape(count, n).T               # F-ordered view, no copy
        res_path = os.path.join(directory, "residuals.txt")
        residuals = (np.atleast_1d(np.loadtxt(res_path)) if os.path.exists(res_path)
                     else np.full(count, np.nan))
        if digest is not None and meta.get("mesh_hash") not in (None, digest):
            raise BasisMismatch("basis was computed for a different discretization")
        basis = cls(values, vectors, residuals, pencil, meta)
        if pencil is not None:
            if pencil.n != n:
                raise BasisMismatch(f"basis has N={n}, pencil has n={pencil.n}")
            err = basis.orthonormality_error(pencil, sample=check_sample)
            if err > 1e-6:
                raise BasisMismatch(f"stored basis is not M-orthonormal (error {err:.2e})")
        return basis


def _tasks(plan):
    return [SliceTask(lo, hi, int(c), i)
            for i, ((lo, hi), c) in enumerate(zip(plan.intervals, plan.counts))]


def solve_all(pencil, plan, pool=None, options=None, postprocess_basis=True):
    """Solve every slice of ``plan`` concurrently and merge into one basis.

    Slice results are written straight into their column block of the
    output, so the full N x N basis is allocated only once.
    """
    opts = options or SolverOptions()
    tasks = _tasks(plan)
    pool = pool or EvaluatorPool(plan.P)
    offsets = np.concatenate([[0], np.cumsum(plan.counts)])
    N = int(offsets[-1])
    values = np.empty(N)
    residuals = np.empty(N)
    vectors = np.empty((pencil.n, N), order="F")
    stats = _SliceStats()
    lock = threading.Lock()
    errors = []

    def run(task):
        i = task.index
        try:
            v, X, r, st = _solve_task(pencil, task, opts, plan.geq[i], plan.geq[i + 1])
        except SliceIncomplete as exc:
            with lock:
                errors.append(exc)
            return
        if v.size != task.expected_count:
            with lock:
                errors.append(SliceIncomplete(v.size, task.expected_count, (task.lo, task.hi)))
            return
        s = slice(offsets[i], offsets[i + 1])
        values[s], residuals[s] = v, r
        vectors[:, s] = X
        with lock:
            stats.add(st)

    t0 = time.perf_counter()
    pool.run(run, tasks)
    t_solve = time.perf_counter() - t0
    if errors:
        found = sum(e.found for e in errors)
        expected = sum(e.expected for e in errors)
        raise SliceIncomplete(found, expected, [e.interval for e in errors])
    basis = EigenBasis(values, vectors, residuals, pencil,
                       meta=dict(P=plan.P, ritz_tol=opts.ritz_tol,
                                 residual_tol=opts.residual_tol,
                                 cluster_tol=opts.cluster_tol, seed=opts.seed,
                                 factorizations=stats.factorizations,
                                 block_solves=stats.block_solves,
                                 restarts=stats.restarts, bisections=stats.bisections))
    basis.timings["solve"] = t_solve
    dropped = _dedupe_boundaries(basis, plan, offsets)
    if dropped:
        raise SliceIncomplete(basis.count, N, "duplicate pairs across slice boundaries")
    if postprocess_basis:
        t0 = time.perf_counter()
        postprocess(basis, opts.cluster_tol, normalize=False)
        basis.timings["postprocess"] = time.perf_counter() - t0
    bad = basis.scaled_residuals() > opts.residual_tol
    if np.any(bad):
        raise SliceIncomplete(int(N - bad.sum()), N, "residual check failed")
    return basis


def _dedupe_boundaries(basis, plan, offsets):
    """Drop the upper copy of a pair found by both slices of a boundary.

    Candidates are the values within ``1e-10 * rho`` of a split on either
    side; two of them are the same pair when their vectors are parallel
    in the M-inner product.  Returns the number of copies dropped.
    """
    tol = 1e-10 * plan.rho
    M = basis.pencil.mass
    drop = []
    for k in range(1, len(offsets) - 1):
        s = plan.splits[k]
        lo_idx = [i for i in range(max(offsets[k - 1], offsets[k] - 4), offsets[k])
                  if abs(basis.values[i] - s) <= tol]
        hi_idx = [i for i in range(offsets[k], min(offsets[k + 1], offsets[k] + 4))
                  if abs(basis.values[i] - s) <= tol]
        for j in hi_idx:
            Mj = spmv(M, basis.vectors[:, j])
            if any(abs(basis.vectors[:, i] @ Mj) > 0.5 for i in lo_idx):
                drop.append(j)
    if drop:
        keep = np.setdiff1d(np.arange(basis.count), drop)
        basis.values, basis.residuals = basis.values[keep], basis.residuals[keep]
        basis.vectors = np.asfortranarray(basis.vectors[:, keep])
    _sort_in_place(basis)
    return len(drop)


def _sort_in_place(basis):
    # Rayleigh-quotient refinement may swap nearly equal neighbours; only
    # the moved columns are permuted so the big array is never copied whole
    order = np.argsort(basis.values, kind="stable")
    moved = np.flatnonzero(order != np.arange(order.size))
    if moved.size:
        src = order[moved]
        basis.values[moved] = basis.values[src]
        basis.residuals[moved] = basis.residuals[src]
        basis.vectors[:, moved] = basis.vectors[:, src]


def _clusters(values, tol):
    if values.size == 0:
        return []
    if tol <= 0:
        return [(i, i + 1) for i in range(values.size)]
    gaps = np.diff(values)
    brk = np.flatnonzero(gaps > tol * np.maximum(1.0, np.abs(values[1:])))
    starts = np.concatenate([[0], brk + 1])
    ends = np.concatenate([brk + 1, [values.size]])
    return [(s, e) for s, e in zip(starts, ends)]


def postprocess(basis, cluster_tol=1e-8, pencil=None, normalize=True):
    """M-orthonormalize eigenvectors that share an eigenvalue, normalize all.

    Clusters are runs of eigenvalues whose consecutive gaps are at most
    ``cluster_tol * max(1, |theta|)``; each is orthogonalized by modified
    Gram-Schmidt (two passes) in the M-inner product, so clusters that
    straddle slice boundaries are handled like any other.  ``M Q`` is formed
    once per cluster and updated alongside ``Q``.  With ``normalize=False``
    columns outside clusters are assumed to be M-normalized already.
    """
    pencil = pencil or basis.pencil
    X = basis.vectors
    M = pencil.mass
    clusters = _clusters(basis.values, cluster_tol)
    multi = [(s, e) for s, e in clusters if e - s > 1]
    # batch the mass products of many small clusters into block products
    groups, cur, width = [], [], 0
    for s, e in multi:
        if cur and width + e - s > _NORM_CHUNK:
            groups.append(cur)
            cur, width = [], 0
        cur.append((s, e))
        width += e - s
    if cur:
        groups.append(cur)
    for group in groups:
        cols = np.concatenate([np.arange(s, e) for s, e in group])
        Qall = np.array(X[:, cols], order="F")
        MQall = np.array(spmv(M, Qall), order="F")
        k = 0
        for s, e in group:
            Q, MQ = Qall[:, k:k + e - s], MQall[:, k:k + e - s]
            k += e - s
            for j in range(e - s):
                q, mq = Q[:, j], MQ[:, j]
                n0 = np.sqrt(abs(q @ mq))
                for _ in range(2):
                    for i in range(j):
                        c = MQ[:, i] @ q
                        q -= c * Q[:, i]
                        mq -= c * MQ[:, i]
                nq = np.sqrt(abs(q @ mq))
                if nq <= 1e-8 * n0:
                    raise RankDeficientCluster(
                        f"cluster at theta={basis.values[s]:.6g} is rank deficient")
                if nq < 0.1 * n0:
                    mq[:] = spmv(M, q)
                    nq = np.sqrt(abs(q @ mq))
                q /= nq
                mq /= nq
        X[:, cols] = Qall
    if normalize:
        for s in range(0, X.shape[1], _NORM_CHUNK):
            blk = np.ascontiguousarray(X[:, s:s + _NORM_CHUNK])
            X[:, s:s + _NORM_CHUNK] /= np.sqrt(np.einsum("ij,ij->j", blk, spmv(M, blk)))
    basis.meta["clusters"] = len(multi)
    return basis


_NORM_CHUNK = 256


def compute_eigenbasis(pencil, P=1, params=None, options=None, seed=0, pool=None):
    """Spectral radius, partition, slice solves and post-processing, timed per phase.

    ``pencil`` may be a bare MatrixPencil or an assembled FEM pencil; in the
    latter case the basis metadata records the discretization (mesh hash,
    order, boundary condition) so that later solves can check it.
    """
    from .partition import estimate_spectral_radius, partition

    ap = None
    if hasattr(pencil, "dofmap"):
        ap, pencil = pencil, pencil.pencil
    opts = options or SolverOptions(seed=seed)
    timings = {}
    t0 = time.perf_counter()
    bounds = estimate_spectral_radius(pencil, seed=seed)
    timings["spectral_radius"] = time.perf_counter() - t0
    own = pool is None
    pool = pool or EvaluatorPool(P)
    if own:
        pool.__enter__()
    try:
        t0 = time.perf_counter()
        plan = partition(pencil, P, params, bounds=bounds, executor=pool.executor, seed=seed)
        timings["partition"] = time.perf_counter() - t0
        basis = solve_all(pencil, plan, pool, opts)
    finally:
        if own:
            pool.__exit__(None, None, None)
    timings.update(basis.timings)
    basis.timings = {k: timings.get(k, 0.0) for k in PHASES}
    basis.meta.update(partition_rounds=plan.rounds,
                      partition_factorizations=plan.factorizations,
                      P_effective=plan.P, spectral_radius=bounds.hi)
    if ap is not None:
        basis.meta.update(mesh_hash=ap.digest, order=ap.basis.order, bc=ap.bc,
                          dim=ap.mesh.dim, elements=ap.mesh.elements_per_side)
    basis.plan = plan
    return basis
