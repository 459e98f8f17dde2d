"""Spectral calculus on a computed eigenbasis.

Once ``(theta_k, phi_k)`` are known, the fractional Laplacian, the
fractional Poisson problem and fractional diffusion are all diagonal:
expand in the basis, scale each coefficient, reconstruct.  None of the
functions here factorize anything, so a cached basis serves any number
of right-hand sides.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (
    BasisMismatch, DimensionMismatch, NeumannNonzeroMean, NonpositiveEigenvalue,
)
from .fem import AssembledPencil, error_norm, evaluate, load_vector
from .linalg import spmv

__all__ = [
    "FractionalParams", "SpectralCoefficients", "expand", "expand_function",
    "reconstruct", "apply_fractional", "solve_poisson", "solve_diffusion",
    "error_norm", "zero_modes", "export_csv", "export_coefficients",
]

ZERO_MODE_REL = 1e-12
NEUMANN_MEAN_REL = 1e-8


@dataclass(frozen=True)
class FractionalParams:
    """Operator order ``alpha`` in [0, 2], diffusivity ``mu`` and time ``t``."""

    alpha: float
    mu: float = 1.0
    t: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in [0, 2], got {self.alpha}")
        if not self.mu > 0.0:
            raise ValueError("mu must be positive")
        if self.t < 0.0:
            raise ValueError("t must be nonnegative")


@dataclass(frozen=True, eq=False)
class SpectralCoefficients:
    """Coefficients aligned with the pairs of one eigenbasis."""

    values: np.ndarray
    basis_hash: str | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectral coefficients must be finite")

    def __len__(self):
        return self.values.shape[0]

    def truncate(self, k):
        """Keep the lowest ``k`` modes, zero the rest."""
        v = np.array(self.values)
        v[k:] = 0.0
        return SpectralCoefficients(v, self.basis_hash)


def _hash(basis):
    return basis.meta.get("mesh_hash")


def _check_hash(coeffs, basis):
    h = _hash(basis)
    if coeffs.basis_hash is not None and h is not None and coeffs.basis_hash != h:
        raise BasisMismatch("coefficients belong to a different basis")
    if len(coeffs) != basis.count:
        raise DimensionMismatch(f"{len(coeffs)} coefficients for a basis of {basis.count}")


def _pencil(basis, pencil=None):
    p = pencil if pencil is not None else basis.pencil
    if isinstance(p, AssembledPencil):
        p = p.pencil
    if p is None:
        raise BasisMismatch("basis carries no pencil; pass one explicitly")
    return p


def expand(f_coeffs, basis, pencil=None):
    """``c_k = phi_k^T M f`` for a FEM coefficient vector ``f``."""
    p = _pencil(basis, pencil)
    f = np.asarray(f_coeffs, dtype=float)
    if f.shape[0] != basis.n or p.n != basis.n:
        raise DimensionMismatch("vector, pencil and basis sizes disagree")
    return SpectralCoefficients(basis.vectors.T @ spmv(p.mass, f), _hash(basis))


def expand_function(f, basis, ap):
    """Coefficients of a field ``f(x, y)`` straight from its load vector.

    ``phi_k^T b`` equals ``phi_k^T M (M^{-1} b)``, so this matches
    ``expand(project(f))`` without solving with the mass matrix.
    """
    if ap.digest != _hash(basis) and _hash(basis) is not None:
        raise BasisMismatch("basis was computed for a different discretization")
    b = load_vector(f, ap)
    return SpectralCoefficients(basis.vectors.T @ b, _hash(basis))


def reconstruct(coeffs, basis):
    """``sum_k c_k phi_k``."""
    _check_hash(coeffs, basis)
    return basis.vectors @ coeffs.values


def zero_modes(basis, rho=None):
    """Mask of eigenvalues treated as zero (below 1e-12 * spectral radius)."""
    rho = rho or float(np.abs(basis.values).max(initial=0.0))
    return np.abs(basis.values) <= ZERO_MODE_REL * max(rho, 1e-300)


def _bc(basis):
    return basis.meta.get("bc", "dirichlet")


def _scale(basis, exponent):
    """``theta_k ** exponent`` with the zero-mode conventions applied."""
    theta = basis.values
    zero = zero_modes(basis)
    if _bc(basis) == "dirichlet" and np.any((theta <= 0) | zero):
        k = int(np.flatnonzero((theta <= 0) | zero)[0])
        raise NonpositiveEigenvalue(f"theta_{k} = {theta[k]:.3e} under Dirichlet conditions")
    s = np.empty_like(theta)
    pos = ~zero
    if np.any(theta[pos] <= 0):
        raise NonpositiveEigenvalue("negative eigenvalue in the basis")
    s[pos] = theta[pos] ** exponent
    # zero modes: identity for exponent 0, annihilated otherwise
    s[zero] = 1.0 if exponent == 0 else 0.0
    return s


def apply_fractional(coeffs, basis, alpha):
    """Scale by ``theta_k ** (alpha / 2)``.

    ``alpha`` in [0, 2] applies the fractional Laplacian; a negative
    ``alpha`` down to -2 applies its inverse (the Poisson solve).
    """
    if not -2.0 <= alpha <= 2.0:
        raise ValueError(f"alpha must lie in [-2, 2], got {alpha}")
    _check_hash(coeffs, basis)
    return SpectralCoefficients(coeffs.values * _scale(basis, 0.5 * alpha), coeffs.basis_hash)


def _as_coeffs(f, basis, pencil):
    if isinstance(f, SpectralCoefficients):
        return f
    return expand(f, basis, pencil)


def solve_poisson(f, basis, alpha, pencil=None):
    """Solve ``(-Laplace)^{alpha/2} u = f``; ``f`` as FEM vector or coefficients."""
    FractionalParams(alpha)
    c = _as_coeffs(f, basis, pencil)
    zero = zero_modes(basis)
    if alpha > 0 and np.any(zero):
        norm = np.linalg.norm(c.values)
        if np.any(np.abs(c.values[zero]) > NEUMANN_MEAN_REL * norm):
            raise NeumannNonzeroMean("forcing has a component along the constant mode")
    return reconstruct(apply_fractional(c, basis, -alpha), basis)


def solve_diffusion(u0, basis, alpha, mu=1.0, t=0.0, pencil=None):
    """``u(t) = sum_k exp(-mu theta_k^{alpha/2} t) c_k phi_k``, exact in time."""
    FractionalParams(alpha, mu, t)
    c = _as_coeffs(u0, basis, pencil)
    _check_hash(c, basis)
    rate = mu * _scale(basis, 0.5 * alpha)
    return reconstruct(SpectralCoefficients(c.values * np.exp(-rate * t), c.basis_hash), basis)


def export_csv(path, u, ap, points=None, samples=33):
    """Write ``x, y, value`` rows on a regular sampling grid or at given points."""
    if points is None:
        axes = [np.linspace(lo, hi, samples) for lo, hi in ap.mesh.bounds]
        grid = np.meshgrid(*axes, indexing="xy")
        points = np.column_stack([g.ravel() for g in grid])
    values = evaluate(u, ap, points)
    names = ["x", "y", "z"][:points.shape[1]] + ["value"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row, v in zip(points, values):
            w.writerow([f"{x:.12g}" for x in row] + [f"{v:.16e}"])
    return points, values


def export_coefficients(path, coeffs):
    np.savetxt(path, np.asarray(getattr(coeffs, "values", coeffs)), fmt="%.16e")
