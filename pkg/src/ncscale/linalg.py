"""Dense Hermitian spectral calculus and unitarily invariant norms.

Hermitian matrices are plain complex ndarrays; :func:`hermitian` is the
validating constructor used at every public entry point.  Eigenvalues are
sorted in descending order everywhere in the package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidInputError

HERMITIAN_TOL = 1e-8


@dataclass(frozen=True)
class LpNorm:
    """Permutation-invariant l_p norm on R^n, ``p`` in [1, inf].

    ``p = 1`` and ``p = inf`` are evaluated exactly rather than as limits.
    Calling the object on a real vector evaluates the norm.
    """

    p: float

    def __post_init__(self):
        p = float(self.p)
        if math.isnan(p) or p < 1:
            raise InvalidInputError(f"l_p norm needs p >= 1, got {self.p}")
        object.__setattr__(self, "p", p)

    @property
    def dual(self) -> "LpNorm":
        if self.p == 1.0:
            return LpNorm(math.inf)
        if math.isinf(self.p):
            return LpNorm(1.0)
        return LpNorm(self.p / (self.p - 1.0))

    def __call__(self, x) -> float:
        a = np.abs(np.asarray(x, dtype=float).ravel())
        if a.size == 0:
            return 0.0
        if self.p == 1.0:
            return float(a.sum())
        if math.isinf(self.p):
            return float(a.max())
        if self.p == 2.0:
            return float(np.sqrt(np.dot(a, a)))
        top = a.max()
        if top == 0.0:
            return 0.0
        # rescale so large p does not overflow
        return float(top * np.sum((a / top) ** self.p) ** (1.0 / self.p))

    def __str__(self):
        return "linf" if math.isinf(self.p) else f"l{self.p:g}"


L1 = LpNorm(1)
L2 = LpNorm(2)
LINF = LpNorm(math.inf)


def as_norm(v) -> LpNorm:
    """Coerce ``v`` (an LpNorm, a number, or "inf") into an :class:`LpNorm`."""
    if isinstance(v, LpNorm):
        return v
    if isinstance(v, str) and v.lower() in ("inf", "linf", "infinity"):
        return LINF
    return LpNorm(float(v))


@dataclass(frozen=True)
class SpectralDecomposition:
    """``H = vectors @ diag(values) @ vectors^dagger`` with values descending."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.conj().T

    def apply(self, fn) -> np.ndarray:
        """Return ``u diag(fn(values)) u^dagger``."""
        return (self.vectors * fn(self.values)) @ self.vectors.conj().T


def as_matrix(a, name="matrix") -> np.ndarray:
    """Complex 2-D array with finite entries."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return m


def hermitian(a, name="matrix") -> np.ndarray:
    """Validate and symmetrize a Hermitian matrix.

    Returns ``(a + a^dagger) / 2``.  Raises :class:`InvalidInputError` when the
    anti-Hermitian part exceeds ``1e-8 * max(1, ||a||)``.
    """
    m = as_matrix(a, name)
    if m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {m.shape}")
    skew = np.linalg.norm(m - m.conj().T)
    scale = max(1.0, float(np.linalg.norm(m)))
    if skew > HERMITIAN_TOL * scale:
        raise InvalidInputError(
            f"{name} is not Hermitian (anti-Hermitian part {skew:.3e})")
    return (m + m.conj().T) / 2


def _fix_phases(vecs: np.ndarray) -> np.ndarray:
    # first non-negligible component of each column made real positive
    out = vecs.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        big = np.nonzero(np.abs(col) > 1e-10 * np.abs(col).max())[0]
        if big.size:
            z = col[big[0]]
            out[:, j] = col * (abs(z) / z)
    return out


def herm_eig(H) -> SpectralDecomposition:
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    Eigenvector phases are normalised so that the first non-negligible
    component of every column is real and positive, which makes the output
    deterministic for a fixed input.
    """
    H = hermitian(H)
    w, V = np.linalg.eigh(H)
    return SpectralDecomposition(w[::-1].copy(), _fix_phases(V[:, ::-1]))


def eigvals_desc(H) -> np.ndarray:
    return np.linalg.eigvalsh(hermitian(H))[::-1]


def schatten_norm(H, v=L2) -> float:
    """``||H||_v = v(eigenvalues of H)``."""
    return as_norm(v)(np.linalg.eigvalsh(hermitian(H)))


def dual_norm(H, v=L2) -> float:
    """Dual of the unitarily invariant norm, evaluated as ``v*(eigenvalues)``."""
    return as_norm(v).dual(np.linalg.eigvalsh(hermitian(H)))


def diag_project(H) -> np.ndarray:
    """Real diagonal of a Hermitian matrix."""
    return np.real(np.diag(hermitian(H))).copy()


def mat_exp(H) -> np.ndarray:
    return herm_eig(H).apply(np.exp)


def _pd_eig(X, what) -> SpectralDecomposition:
    dec = herm_eig(X)
    lo = dec.values[-1]
    if not lo > 0:
        raise DomainError(
            f"{what} needs a positive definite matrix; smallest eigenvalue {lo:.3e}",
            min_eigenvalue=float(lo), max_eigenvalue=float(dec.values[0]))
    return dec


def mat_log(X) -> np.ndarray:
    return _pd_eig(X, "mat_log").apply(np.log)


def mat_sqrt(X) -> np.ndarray:
    return _pd_eig(X, "mat_sqrt").apply(np.sqrt)


def mat_inv_sqrt(X) -> np.ndarray:
    return _pd_eig(X, "mat_inv_sqrt").apply(lambda w: 1.0 / np.sqrt(w))


def numerical_rank(M, tol=None) -> int:
    """Rank via singular values above ``16 * max(shape) * eps * sigma_max``."""
    M = np.asarray(M)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if tol is None:
        tol = rank_tolerance(M.shape, s[0] if s.size else 0.0)
    return int(np.count_nonzero(s > tol))


def rank_tolerance(shape, smax) -> float:
    return 16.0 * max(shape) * np.finfo(float).eps * smax


def orth(M, tol=None) -> np.ndarray:
    """Orthonormal basis of the column space of ``M`` using the package rank rule."""
    M = np.asarray(M, dtype=complex)
    if M.size == 0 or M.shape[1] == 0:
        return np.zeros((M.shape[0], 0), dtype=complex)
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if tol is None:
        tol = rank_tolerance(M.shape, s[0] if s.size else 0.0)
    return U[:, : int(np.count_nonzero(s > tol))]


def null_space(M, tol=None) -> np.ndarray:
    """Orthonormal basis of the kernel of ``M``."""
    M = np.asarray(M, dtype=complex)
    n = M.shape[1]
    if M.shape[0] == 0:
        return np.eye(n, dtype=complex)
    _, s, Vh = np.linalg.svd(M, full_matrices=True)
    if tol is None:
        tol = rank_tolerance(M.shape, s[0] if s.size else 0.0)
    r = int(np.count_nonzero(s > tol))
    return Vh[r:].conj().T


def complete_basis(B) -> np.ndarray:
    """Extend orthonormal columns ``B`` (n x k) to a unitary ``[B, B_perp]``."""
    B = np.asarray(B, dtype=complex)
    n, k = B.shape
    if k == 0:
        return np.eye(n, dtype=complex)
    Q, _ = np.linalg.qr(B, mode="complete")
    return np.concatenate([B, Q[:, k:]], axis=1)
