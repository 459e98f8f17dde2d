"""Eigenvalue counting for the pencil (K, M).

Exact counts come from the inertia of ``K - a*M``; approximate counts
from a Chebyshev (kernel polynomial) expansion of the step function
applied to the mass-symmetrized operator and a trace estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroPivot
from .linalg import ldlt_factor, spmv

#: relative size of the shift perturbation applied after a zero pivot
SHIFT_PERTURBATION = 1e-8
MAX_PERTURBATIONS = 3


def _shift_scale(pencil, rho):
    if rho is not None:
        return float(rho)
    cached = getattr(pencil, "spectral_radius", None)
    if cached:
        return float(cached)
    nk, nm = pencil.norms1
    return nk / nm if nm else 1.0


def count_geq_with_shift(pencil, a, rho=None):
    """Like :func:`count_geq_exact` but also returns the shift actually factored.

    A shift that lands on an eigenvalue is nudged *down* by ``1e-8 * rho``
    (up to three times), so an eigenvalue sitting exactly at ``a`` is
    counted as ``>= a``.
    """
    step = SHIFT_PERTURBATION * _shift_scale(pencil, rho)
    shift = float(a)
    for attempt in range(MAX_PERTURBATIONS + 1):
        try:
            f = ldlt_factor(pencil, shift)
        except ZeroPivot:
            if attempt == MAX_PERTURBATIONS:
                raise
            shift = float(a) - (attempt + 1) * step
            continue
        return f.n_positive + f.n_zero, shift
    raise AssertionError("unreachable")


def count_geq_exact(pencil, a, rho=None):
    """Number of eigenvalues ``>= a``, from the inertia of ``K - aM``."""
    return count_geq_with_shift(pencil, a, rho)[0]


def count_in_interval(pencil, lo, hi, rho=None):
    """Number of eigenvalues in the half-open interval ``[lo, hi)``."""
    if hi < lo:
        raise ValueError("count_in_interval needs lo <= hi")
    if hi == lo:
        return 0
    return count_geq_exact(pencil, lo, rho) - count_geq_exact(pencil, hi, rho)


# ----------------------------------------------------------------------------
# kernel polynomial method

def jackson_factors(degree):
    """Jackson damping g_k, k = 0..degree."""
    N = degree + 1
    k = np.arange(degree + 1)
    return ((N - k) * np.cos(np.pi * k / N) + np.sin(np.pi * k / N) / np.tan(np.pi / N)) / N


@dataclass(frozen=True)
class ChebyshevFilter:
    """Truncated Chebyshev series of the step ``H(x - a)`` on ``[lo, hi]``."""

    a: float
    lo: float
    hi: float
    coeffs: np.ndarray
    damping: str = "none"

    @property
    def degree(self):
        return self.coeffs.size - 1

    def to_unit(self, x):
        return (2.0 * np.asarray(x, dtype=float) - (self.hi + self.lo)) / (self.hi - self.lo)

    def __call__(self, x):
        return np.polynomial.chebyshev.chebval(self.to_unit(x), self.coeffs)


def chebyshev_step_coeffs(a, bounds, degree, damping="none"):
    """Chebyshev coefficients of the unit step at ``a`` over ``bounds``.

    With ``t`` the image of ``a`` in [-1, 1], ``gamma_0 = arccos(t)/pi`` and
    ``gamma_k = 2 sin(k arccos t) / (k pi)``.
    """
    lo, hi = (float(b) for b in bounds)
    if not lo < hi:
        raise ValueError("bounds must satisfy lo < hi")
    if not lo <= a <= hi:
        raise ValueError(f"step location {a} outside bounds [{lo}, {hi}]")
    if degree < 1:
        raise ValueError("degree must be >= 1")
    if damping not in ("none", "jackson"):
        raise ValueError(f"unknown damping {damping!r}")
    t = np.clip((2.0 * a - (hi + lo)) / (hi - lo), -1.0, 1.0)
    phi = np.arccos(t)
    k = np.arange(1, degree + 1)
    gamma = np.concatenate([[phi / np.pi], 2.0 * np.sin(k * phi) / (k * np.pi)])
    if damping == "jackson":
        gamma = gamma * jackson_factors(degree)
    return ChebyshevFilter(float(a), lo, hi, gamma, damping)


def _rademacher(n, s, seed):
    rng = np.random.default_rng(seed)
    return rng.choice([-1.0, 1.0], size=(n, s))


def count_geq_kpm(pencil, a, degree=512, probes=32, damping="none", seed=0,
                  bounds=None):
    """Approximate ``#{theta >= a}`` as a trace of the Chebyshev step filter.

    The recurrence runs on ``G^{-1} K G^{-T}`` with ``M = G G^T`` taken from
    the mass factorization, which has the pencil's eigenvalues.  ``probes``
    Rademacher vectors estimate the trace; ``probes=None`` (for n <= 512) or
    ``probes >= n`` uses the unit basis and returns the exact trace of the
    filtered operator.  The result is not rounded.
    """
    n = pencil.n
    if bounds is None:
        from .partition import estimate_spectral_radius

        sb = estimate_spectral_radius(pencil, seed=seed)
        bounds = (sb.lo, sb.hi)
    lo, hi = (bounds.lo, bounds.hi) if hasattr(bounds, "hi") else bounds
    if a <= lo:
        return float(n)
    if a >= hi:
        return 0.0
    filt = chebyshev_step_coeffs(a, (lo, hi), degree, damping)
    return float(filt.coeffs @ _moments(pencil, lo, hi, degree, probes, seed))


def _moments(pencil, lo, hi, degree, probes, seed):
    """Chebyshev moments ``tr(Z^T T_k(A) Z)``; independent of the step location.

    A shift grid reuses them, so they are memoized on the pencil.
    """
    n = pencil.n
    deterministic = probes is None and n <= 512 or probes is not None and probes >= n
    key = (float(lo), float(hi), int(degree), None if deterministic else (probes or 32, seed))
    memo = pencil.__dict__.setdefault("_kpm_moments", {})
    if key in memo:
        return memo[key]
    mf = pencil.mass_factor()
    if deterministic:
        Z = np.eye(n)
    else:
        Z = _rademacher(n, probes or 32, seed)
    scale, center = 2.0 / (hi - lo), (hi + lo) / (hi - lo)

    def op(X):
        return scale * mf.lower_solve(spmv(pencil.stiffness, mf.upper_solve(X))) - center * X

    T0 = Z
    T1 = op(Z)
    mu = np.empty(degree + 1)
    mu[0] = np.sum(Z * T0)
    mu[1] = np.sum(Z * T1)
    for k in range(2, degree + 1):
        T0, T1 = T1, 2.0 * op(T1) - T0
        mu[k] = np.sum(Z * T1)
    if not deterministic:
        mu /= Z.shape[1]
    memo[key] = mu
    return mu
