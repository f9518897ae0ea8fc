"""Geometry of the positive-definite cone P_n = GL_n / U_n.

Points are Hermitian positive-definite ndarrays.  Distances use the invariant
Finsler metric ``d_v(X, Y) = ||log(X^{-1/2} Y X^{-1/2})||_v``; since every
d_2-geodesic also realises d_v, the closed-form geodesic below is the only
curve the package needs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import BoundaryProximityError, DomainError
from .linalg import (L2, LINF, SpectralDecomposition, as_norm, dual_norm,
                     herm_eig, hermitian, schatten_norm)

PD_RTOL = 1e-13


def pd_eig(X, name="X") -> SpectralDecomposition:
    """Spectral decomposition of a point of P_n, validating membership.

    A matrix is accepted iff ``lambda_min > 1e-13 * lambda_max``.  Points that
    are positive but closer to the boundary raise
    :class:`BoundaryProximityError`; indefinite matrices raise
    :class:`DomainError`.  Both carry the extreme eigenvalues.
    """
    dec = herm_eig(X)
    lo, hi = float(dec.values[-1]), float(dec.values[0])
    if not lo > 0:
        raise DomainError(f"{name} is not positive definite (lambda_min={lo:.3e})",
                          min_eigenvalue=lo, max_eigenvalue=hi)
    if lo <= PD_RTOL * hi:
        raise BoundaryProximityError(
            f"{name} is within numerical distance of the PD boundary "
            f"(lambda_min/lambda_max={lo / hi:.3e})",
            min_eigenvalue=lo, max_eigenvalue=hi)
    return dec


def as_pd(X, name="X") -> np.ndarray:
    X = hermitian(X, name)
    pd_eig(X, name)
    return X


def is_pd(X) -> bool:
    try:
        pd_eig(X)
    except DomainError:
        return False
    return True


@dataclass(frozen=True)
class TangentVector:
    base: np.ndarray
    direction: np.ndarray

    def norm(self, v=L2) -> float:
        return tangent_norm(self.base, self.direction, v)


@dataclass(frozen=True)
class CotangentVector:
    """A covector ``F`` at ``base``, acting on tangents by ``H -> tr(F H)``."""

    base: np.ndarray
    form: np.ndarray

    def __call__(self, H) -> float:
        return float(np.real(np.trace(self.form @ H)))

    def dual_norm(self, v=L2) -> float:
        return cotangent_dual_norm(self.base, self.form, v)


def _half_powers(X, name="X"):
    dec = pd_eig(X, name)
    root = np.sqrt(dec.values)
    u = dec.vectors
    return (u * root) @ u.conj().T, (u / root) @ u.conj().T


def geodesic(X, H, t) -> np.ndarray:
    """Point at time ``t`` on the d_2-geodesic through ``X`` with velocity ``H``.

    ``X^{1/2} exp(t X^{-1/2} H X^{-1/2}) X^{1/2}``; ``geodesic(X, H, 0)`` returns
    ``X`` itself.
    """
    X = hermitian(X, "X")
    H = hermitian(H, "H")
    if t == 0:
        pd_eig(X)
        return X.copy()
    s, si = _half_powers(X)
    inner = herm_eig(si @ H @ si)
    E = inner.apply(lambda w: np.exp(t * w))
    Y = s @ E @ s
    return (Y + Y.conj().T) / 2


def log_ratio_eigs(X, Y) -> np.ndarray:
    """Eigenvalues of ``log(X^{-1/2} Y X^{-1/2})``, descending."""
    X = hermitian(X, "X")
    Y = hermitian(Y, "Y")
    pd_eig(X, "X")
    pd_eig(Y, "Y")
    w = scipy.linalg.eigh(Y, X, eigvals_only=True)
    return np.log(w)[::-1]


def finsler_dist(X, Y, v=L2) -> float:
    """``d_v(X, Y) = ||log(X^{-1/2} Y X^{-1/2})||_v``."""
    return as_norm(v)(log_ratio_eigs(X, Y))


def tangent_norm(X, H, v=L2) -> float:
    """``||H||_{v,X} = ||X^{-1/2} H X^{-1/2}||_v``."""
    _, si = _half_powers(hermitian(X, "X"))
    return schatten_norm(si @ hermitian(H, "H") @ si, v)


def cotangent_dual_norm(X, F, v=L2) -> float:
    """``||F||*_{v,X} = ||X^{1/2} F X^{1/2}||_{v*}``."""
    s, _ = _half_powers(hermitian(X, "X"))
    return dual_norm(s @ hermitian(F, "F") @ s, v)


def slope(df: CotangentVector, v=LINF) -> float:
    """Metric slope of a convex differentiable function from its differential."""
    return cotangent_dual_norm(df.base, df.form, v)


def riemannian_gradient(X, F) -> np.ndarray:
    """d_2-gradient ``X F X`` of a covector ``F`` at ``X``."""
    X = hermitian(X, "X")
    G = X @ hermitian(F, "F") @ X
    return (G + G.conj().T) / 2


class PDPoint:
    """A point of P_n held as ``X = u diag(exp(s)) u^dagger``.

    Storing log-eigenvalues keeps far-out points (``||log X||`` of 20-50, well
    past what a dense matrix can resolve) exact.  The dense-matrix tolerance of
    :func:`pd_eig` applies only to :meth:`from_matrix`.
    """

    __slots__ = ("vectors", "log_values")

    def __init__(self, vectors, log_values):
        s = np.asarray(log_values, dtype=float)
        order = np.argsort(-s, kind="stable")
        self.vectors = np.asarray(vectors, dtype=complex)[:, order]
        self.log_values = s[order]

    @classmethod
    def from_matrix(cls, X):
        dec = pd_eig(hermitian(X, "X"))
        return cls(dec.vectors, np.log(dec.values))

    @classmethod
    def from_log(cls, H):
        dec = herm_eig(H)
        return cls(dec.vectors, dec.values)

    @classmethod
    def from_factor(cls, h):
        """Point ``h h^dagger`` for an invertible ``h``."""
        P, sig, _ = np.linalg.svd(np.asarray(h, dtype=complex))
        if not sig[-1] > 0:
            raise DomainError("factor is singular", min_eigenvalue=0.0)
        return cls(P, 2.0 * np.log(sig))

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n, dtype=complex), np.zeros(n))

    @property
    def n(self) -> int:
        return self.log_values.size

    @property
    def matrix(self) -> np.ndarray:
        X = (self.vectors * np.exp(self.log_values)) @ self.vectors.conj().T
        return (X + X.conj().T) / 2

    def factor(self) -> np.ndarray:
        """Column-graded square root ``h = u diag(exp(s/2))`` with ``X = h h^dagger``."""
        return self.vectors * np.exp(self.log_values / 2)

    def sqrt(self) -> np.ndarray:
        return (self.vectors * np.exp(self.log_values / 2)) @ self.vectors.conj().T

    def log(self) -> np.ndarray:
        L = (self.vectors * self.log_values) @ self.vectors.conj().T
        return (L + L.conj().T) / 2

    def log_det(self) -> float:
        return float(self.log_values.sum())

    def log_condition(self) -> float:
        return float(self.log_values[0] - self.log_values[-1])

    def near_boundary(self) -> bool:
        return self.log_condition() >= -np.log(PD_RTOL)

    def move(self, R, t) -> "PDPoint":
        """Follow the geodesic ``h exp(t R) h^dagger`` with ``h = self.factor()``.

        Equals ``geodesic(X, h R h^dagger, t)``: ``R`` is the velocity expressed
        in the whitened frame of this point.
        """
        R = hermitian(R, "R")
        dec = herm_eig(R)
        K = (np.exp(self.log_values / 2)[:, None] * dec.vectors) * np.exp(t * dec.values / 2)
        P, sig, _ = np.linalg.svd(K)
        return PDPoint(self.vectors @ P, 2.0 * np.log(sig))

    def __repr__(self):
        return f"PDPoint(n={self.n}, log_values={np.round(self.log_values, 4).tolist()})"


def as_point(X) -> PDPoint:
    return X if isinstance(X, PDPoint) else PDPoint.from_matrix(X)


def point_log_ratio(X: PDPoint, Y: PDPoint) -> np.ndarray:
    """Eigenvalues of ``log(X^{-1/2} Y X^{-1/2})`` from graded factors, descending."""
    K = np.linalg.solve(X.factor(), Y.factor())
    return 2.0 * np.log(np.linalg.svd(K, compute_uv=False))


def point_dist(X: PDPoint, Y: PDPoint, v=L2) -> float:
    return as_norm(v)(point_log_ratio(X, Y))
