"""Load-balanced partitioning of the spectrum [0, rho] into contiguous slices.

Every count is an exact inertia count.  Counts that the evaluators can
issue simultaneously are grouped into *rounds*; a plan records how many
sequential rounds (and how many factorizations in total) it cost, which
is the quantity the partitioning strategies are compared on.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .counting import count_geq_with_shift
from .errors import EmptySpectrum
from .linalg import spmv

__all__ = [
    "SpectrumBounds", "PartitionPlan", "RefinementParams", "estimate_spectral_radius",
    "partition_uniform", "binary_search_split", "partition_tree", "refine_global",
    "refine_local", "partition", "save_plan", "load_plan",
]


@dataclass(frozen=True)
class SpectrumBounds:
    lo: float
    hi: float
    estimate: float
    margin: float
    converged: bool = True
    iterations: int = 0


@dataclass(frozen=True)
class RefinementParams:
    n_a: int = 7
    n_b: int = 3
    n_c: int = 10
    imbalance_threshold: float = 0.2

    def __post_init__(self):
        if min(self.n_a, self.n_b, self.n_c) < 0:
            raise ValueError("refinement counts must be nonnegative")
        if not 0 < self.imbalance_threshold < 1:
            raise ValueError("imbalance_threshold must lie in (0, 1)")


@dataclass
class PartitionPlan:
    """Split points ``s_0 < ... < s_P`` and ``geq[i] = #{theta >= s_i}``.

    Slice ``i`` is ``[s_i, s_{i+1})`` and holds ``geq[i] - geq[i+1]``
    eigenvalues.
    """

    splits: np.ndarray
    geq: np.ndarray
    rho: float
    rounds: int = 0
    factorizations: int = 0
    history: list = field(default_factory=list)
    merged: bool = False

    def __post_init__(self):
        self.splits = np.asarray(self.splits, dtype=float)
        self.geq = np.asarray(self.geq, dtype=np.int64)
        if self.splits.shape != self.geq.shape or self.splits.size < 2:
            raise ValueError("a plan needs P+1 split points with counts")
        if np.any(np.diff(self.splits) <= 0):
            raise ValueError("split points must be strictly increasing")
        if np.any(np.diff(self.geq) > 0):
            raise ValueError("counts above split points must be nonincreasing")

    @property
    def P(self):
        return self.splits.size - 1

    @property
    def counts(self):
        return self.geq[:-1] - self.geq[1:]

    @property
    def N(self):
        return int(self.geq[0] - self.geq[-1])

    @property
    def max_load(self):
        return int(self.counts.max())

    @property
    def min_load(self):
        return int(self.counts.min())

    @property
    def ideal_load(self):
        return self.N / self.P

    @property
    def intervals(self):
        return list(zip(self.splits[:-1], self.splits[1:]))


class _Rounds:
    """Issues batches of concurrent exact counts and tallies them."""

    def __init__(self, pencil, rho, executor=None):
        self.pencil = pencil
        self.rho = rho
        self.executor = executor
        self.rounds = 0
        self.factorizations = 0

    def count(self, shifts):
        shifts = list(shifts)
        if not shifts:
            return []
        self.rounds += 1
        self.factorizations += len(shifts)
        work = lambda a: count_geq_with_shift(self.pencil, a, self.rho)  # noqa: E731
        if self.executor is None or len(shifts) == 1:
            return [work(a) for a in shifts]
        return list(self.executor.map(work, shifts))

    def stamp(self, plan, stage):
        plan.rounds += self.rounds
        plan.factorizations += self.factorizations
        plan.history.append((stage, plan.max_load, plan.min_load, plan.ideal_load, self.rounds))
        self.rounds = self.factorizations = 0
        return plan


def estimate_spectral_radius(pencil, tol=1e-3, max_iters=200, seed=0, margin=0.1):
    """Power iteration on M^{-1} K; returns bounds ``[0, 1.1 * estimate]``.

    Stops when the Rayleigh quotient changes by less than ``tol``
    (relative).  Without convergence the margin is widened to 1.5 and a
    warning is issued.
    """
    n = pencil.n
    if n == 0:
        raise EmptySpectrum("pencil has dimension 0")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    K, M = pencil.stiffness, pencil.mass
    mx = spmv(M, x)
    x /= math.sqrt(x @ mx)
    theta = 0.0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        kx = spmv(K, x)
        new = float(x @ kx)           # x is M-normalized
        z = pencil.mass_solve(kx)
        nz = math.sqrt(abs(z @ spmv(M, z)))
        if nz == 0.0:
            converged = True
            theta = new
            break
        x = z / nz
        if it > 1 and abs(new - theta) <= tol * abs(new):
            theta = new
            converged = True
            break
        theta = new
    # one last Rayleigh quotient on the freshest iterate
    theta = max(theta, float(x @ spmv(K, x)))
    if not converged:
        warnings.warn("spectral radius power iteration did not converge; "
                      "using a 1.5x safety margin", RuntimeWarning, stacklevel=2)
        margin = 0.5
    hi = theta * (1.0 + margin) if theta > 0 else 1.0
    pencil.spectral_radius = hi
    return SpectrumBounds(0.0, hi, theta, margin, converged, it)


def _edges(bounds):
    eps = 1e-6 * bounds.hi
    return bounds.lo - eps, bounds.hi + eps


def partition_uniform(bounds, P, pencil, executor=None):
    """Equal-length slices of [lo, hi]; one round of P+1 concurrent counts.

    The two outer counts validate the bounds: every eigenvalue must lie
    above ``s_0``, and if some lie above ``s_P`` the top is raised (1.5x)
    until none do.
    """
    if P < 1:
        raise ValueError("P must be >= 1")
    if pencil.n == 0:
        raise EmptySpectrum("pencil has dimension 0")
    rho = bounds.hi
    s0, sP = _edges(bounds)
    inner = bounds.lo + (bounds.hi - bounds.lo) * np.arange(1, P) / P
    rounds = _Rounds(pencil, rho, executor)
    res = rounds.count([s0, *inner, sP])
    splits = np.array([r[1] for r in res])
    geq = np.array([r[0] for r in res])
    if geq[0] != pencil.n:
        raise ValueError(f"{pencil.n - geq[0]} eigenvalues lie below {s0}; pencil not semidefinite?")
    while geq[-1] > 0:
        sP = splits[-1] + 0.5 * (splits[-1] - bounds.lo)
        (c, s), = rounds.count([sP])
        splits[-1], geq[-1] = s, c
    plan = PartitionPlan(splits, geq, rho)
    return rounds.stamp(plan, "uniform")


# ----------------------------------------------------------------------------
# bisection, run in lockstep so concurrent searches share rounds

class _Bisection:
    def __init__(self, lo, hi, geq_lo, geq_hi, target, n_c, current=None):
        self.geq_lo = geq_lo
        self.target = target
        total = geq_lo - geq_hi
        self.l, self.h = lo, hi
        cands = [(abs(target), lo, geq_lo), (abs(total - target), hi, geq_hi)]
        if current is not None:
            s, g = current
            left = geq_lo - g
            cands.append((abs(left - target), s, g))
            if left < target:
                self.l = s
            elif left > target:
                self.h = s
        self.best = min(cands, key=lambda c: c[0])
        self.steps = 0
        self.n_c = n_c
        self.done = self.best[0] == 0 or n_c == 0

    def shift(self):
        return 0.5 * (self.l + self.h)

    def update(self, geq, shift):
        left = self.geq_lo - geq
        err = abs(left - self.target)
        if err < self.best[0]:
            self.best = (err, shift, geq)
        self.steps += 1
        if left < self.target:
            self.l = shift
        else:
            self.h = shift
        if err == 0 or self.steps >= self.n_c:
            self.done = True

    @property
    def split(self):
        return self.best[1]

    @property
    def split_geq(self):
        return self.best[2]


def _run_lockstep(searches, rounds):
    while True:
        active = [s for s in searches if not s.done]
        if not active:
            return
        res = rounds.count([s.shift() for s in active])
        for s, (g, shift) in zip(active, res):
            s.update(g, shift)


def binary_search_split(pencil, lo, hi, target_count_left, n_c=10, rho=None,
                        geq_lo=None, geq_hi=None):
    """Bisect for a split in [lo, hi] leaving ``target_count_left`` eigenvalues below it.

    Each step is one exact count.  Returns the visited split whose left
    count is closest to the target.
    """
    if geq_lo is None:
        geq_lo, lo = count_geq_with_shift(pencil, lo, rho)
    if geq_hi is None:
        geq_hi, hi = count_geq_with_shift(pencil, hi, rho)
    if target_count_left > geq_lo - geq_hi:
        raise ValueError("target exceeds the number of eigenvalues in the interval")
    search = _Bisection(lo, hi, geq_lo, geq_hi, target_count_left, n_c)
    _run_lockstep([search], _Rounds(pencil, rho))
    return search.split


def partition_tree(pencil, bounds, P, n_c=10, executor=None):
    """Recursive halving by bisection (the baseline the greedy scheme replaces).

    A node holding ``m`` slices is split so that its left part carries
    ``ceil(m/2)/m`` of its eigenvalues; all nodes on one tree level search
    concurrently, so the plan costs about ``ceil(log2 P) * n_c`` rounds.
    """
    if P < 1:
        raise ValueError("P must be >= 1")
    rho = bounds.hi
    rounds = _Rounds(pencil, rho, executor)
    s0, sP = _edges(bounds)
    (g0, s0), (gP, sP) = rounds.count([s0, sP])
    if g0 - gP == 0:
        raise EmptySpectrum("no eigenvalues inside the bounds")
    splits = np.full(P + 1, np.nan)
    geq = np.zeros(P + 1, dtype=np.int64)
    splits[0], splits[P], geq[0], geq[P] = s0, sP, g0, gP
    level = [(0, P)]
    while level:
        searches, nodes = [], []
        for i0, i1 in level:
            m = i1 - i0
            if m < 2:
                continue
            ml = (m + 1) // 2
            total = geq[i0] - geq[i1]
            target = int(round(total * ml / m))
            searches.append(_Bisection(splits[i0], splits[i1], geq[i0], geq[i1], target, n_c))
            nodes.append((i0, i0 + ml, i1))
        _run_lockstep(searches, rounds)
        level = []
        for (i0, mid, i1), s in zip(nodes, searches):
            splits[mid], geq[mid] = s.split, s.split_geq
            level += [(i0, mid), (mid, i1)]
    splits, geq = _nudge_duplicates(splits, geq)
    return rounds.stamp(PartitionPlan(splits, geq, rho), "tree")


def _nudge_duplicates(splits, geq):
    # bisection may return an endpoint for an empty child; keep splits strictly increasing
    for i in range(1, splits.size):
        if splits[i] <= splits[i - 1]:
            splits[i] = np.nextafter(splits[i - 1], np.inf)
    return splits, geq


# ----------------------------------------------------------------------------
# greedy refinement

def _quantile_splits(plan):
    """Invert the piecewise-linear cumulative count at k*N/P, k = 1..P-1."""
    below = plan.geq[0] - plan.geq                     # eigenvalues under each split
    targets = plan.N * np.arange(1, plan.P) / plan.P
    seg = np.searchsorted(below, targets, side="right") - 1
    seg = np.clip(seg, 0, plan.P - 1)
    f0, f1 = below[seg], below[seg + 1]
    s0, s1 = plan.splits[seg], plan.splits[seg + 1]
    frac = np.where(f1 > f0, (targets - f0) / np.maximum(f1 - f0, 1), 0.0)
    return s0 + frac * (s1 - s0)


def refine_global(pencil, plan, n_a=7, executor=None):
    """Greedy quantile re-splitting from the piecewise-constant density.

    Each iteration proposes splits that would balance the slices if the
    current histogram were the true density, then evaluates the P-1
    proposals concurrently (one round).  The best plan seen is returned;
    the iteration is not expected to converge.
    """
    rounds = _Rounds(pencil, plan.rho, executor)
    best = current = plan
    for _ in range(n_a):
        if current.P < 2:
            break
        inner = _quantile_splits(current)
        if np.allclose(inner, current.splits[1:-1], rtol=1e-14, atol=0):
            break
        res = rounds.count(inner)
        splits = np.concatenate([[current.splits[0]], [r[1] for r in res], [current.splits[-1]]])
        geq = np.concatenate([[current.geq[0]], [r[0] for r in res], [current.geq[-1]]])
        splits, geq = _nudge_duplicates(splits, geq)
        current = PartitionPlan(splits, geq, plan.rho)
        if current.max_load < best.max_load:
            best = current
    out = replace(best, rounds=plan.rounds, factorizations=plan.factorizations,
                  history=list(plan.history))
    return rounds.stamp(out, "global")


def refine_local(pencil, plan, n_b=3, n_c=10, threshold=0.2, executor=None):
    """Rebalance badly unbalanced neighbouring slice pairs by bisection.

    Each pass treats the disjoint pairs (0,1), (2,3), ... and then
    (1,2), (3,4), ...; the pairs of one half-pass search concurrently, so a
    pass costs at most ``2 * n_c`` rounds.  A pair is touched only when its
    counts differ by more than ``threshold`` of its total.
    """
    rounds = _Rounds(pencil, plan.rho, executor)
    splits, geq = plan.splits.copy(), plan.geq.copy()
    for _ in range(n_b):
        changed = False
        for parity in (0, 1):
            searches, mids = [], []
            for i in range(parity, plan.P - 1, 2):
                c0, c1 = geq[i] - geq[i + 1], geq[i + 1] - geq[i + 2]
                if abs(c0 - c1) <= threshold * (c0 + c1):
                    continue
                target = (c0 + c1) // 2
                searches.append(_Bisection(splits[i], splits[i + 2], geq[i], geq[i + 2],
                                           target, n_c, current=(splits[i + 1], geq[i + 1])))
                mids.append(i + 1)
            _run_lockstep(searches, rounds)
            for k, s in zip(mids, searches):
                if s.split != splits[k]:
                    changed = True
                splits[k], geq[k] = s.split, s.split_geq
        if not changed:
            break
    splits, geq = _nudge_duplicates(splits, geq)
    out = PartitionPlan(splits, geq, plan.rho, plan.rounds, plan.factorizations,
                        list(plan.history), plan.merged)
    return rounds.stamp(out, "local")


def merge_empty(plan):
    """Drop split points bounding empty slices (P shrinks, ``merged`` set)."""
    if plan.min_load > 0 or plan.N == 0:
        return plan
    keep = [0]
    for k in range(1, plan.P + 1):
        if plan.geq[k] != plan.geq[keep[-1]]:
            keep.append(k)
        elif k == plan.P:
            keep[-1] = k
    if keep[0] != 0:
        keep.insert(0, 0)
    keep = np.array(keep)
    out = replace(plan, splits=plan.splits[keep], geq=plan.geq[keep],
                  history=list(plan.history), merged=True)
    return out


def partition(pencil, P, params=None, bounds=None, executor=None, seed=0):
    """Uniform guess, greedy global refinement, then local pair refinement.

    ``params.n_a`` bounds the rounds of the global stage *including* the
    evaluation of the uniform guess, so the pipeline costs at most
    ``n_a + 2 * n_b * n_c`` sequential rounds whatever the value of P.
    """
    params = params or RefinementParams()
    if pencil.n == 0:
        raise EmptySpectrum("pencil has dimension 0")
    if bounds is None:
        bounds = estimate_spectral_radius(pencil, seed=seed)
    plan = partition_uniform(bounds, P, pencil, executor)
    plan = refine_global(pencil, plan, max(params.n_a - 1, 0), executor)
    plan = refine_local(pencil, plan, params.n_b, params.n_c,
                        params.imbalance_threshold, executor)
    if plan.N == 0:
        raise EmptySpectrum("no eigenvalues found in the bounds")
    plan = merge_empty(plan)
    if int(plan.counts.sum()) != plan.N:
        raise AssertionError("slice counts do not add up")
    return plan


def stage_loads(plan):
    """[(stage, max_load, min_load, ideal_load, rounds)] for each recorded stage."""
    return list(plan.history)


def save_plan(plan, path):
    """One line per slice: ``lo hi count``."""
    with open(path, "w", encoding="utf-8") as fh:
        for (lo, hi), c in zip(plan.intervals, plan.counts):
            fh.write(f"{lo:.17g} {hi:.17g} {int(c)}\n")


def load_plan(path, rho=None):
    rows = np.loadtxt(path, ndmin=2)
    lo, hi, counts = rows[:, 0], rows[:, 1], rows[:, 2].astype(np.int64)
    if np.any(lo[1:] != hi[:-1]):
        raise ValueError("plan slices must be contiguous")
    splits = np.concatenate([lo, hi[-1:]])
    geq = np.concatenate([np.cumsum(counts[::-1])[::-1], [0]])
    return PartitionPlan(splits, geq, rho if rho is not None else float(hi[-1]))
