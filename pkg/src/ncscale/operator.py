"""Matrix tuples as completely positive maps.

``T(X) = sum_k A_k X A_k^dagger`` and ``T*(X) = sum_k A_k^dagger X A_k``, the
two-sided scaling action ``A -> g^dagger A h``, scaling residuals, and the
capacity ``f(X) = log det T(X) - log det X`` with its differential.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (BoundaryProximityError, InvalidInputError,
                     InvalidScalingError, NotFullSupportError)
from .linalg import (L1, LpNorm, as_matrix, as_norm, herm_eig, hermitian,
                     numerical_rank)
from .manifold import CotangentVector, PDPoint, as_point, pd_eig

GRAD_MAX_COND = 1e14


class MatrixTuple:
    """An immutable tuple ``(A_1, ..., A_m)`` of ``n x n`` complex matrices."""

    __slots__ = ("_mats",)

    def __init__(self, matrices):
        try:
            arr = np.array(matrices, dtype=complex)
        except (TypeError, ValueError):
            raise InvalidInputError("matrices must be equally sized square arrays") from None
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] != arr.shape[2]:
            raise InvalidInputError(
                f"expected m >= 1 square matrices of equal size, got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise InvalidInputError("matrices must be at least 1 x 1")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("tuple has non-finite entries")
        arr.setflags(write=False)
        self._mats = arr

    @property
    def mats(self) -> np.ndarray:
        """Read-only array of shape (m, n, n)."""
        return self._mats

    @property
    def n(self) -> int:
        return self._mats.shape[1]

    @property
    def m(self) -> int:
        return self._mats.shape[0]

    def __len__(self):
        return self.m

    def __iter__(self):
        return iter(self._mats)

    def __getitem__(self, k):
        return self._mats[k]

    def __eq__(self, other):
        return isinstance(other, MatrixTuple) and np.array_equal(self._mats, other._mats)

    def __hash__(self):
        return hash(self._mats.tobytes())

    def __repr__(self):
        return f"MatrixTuple(n={self.n}, m={self.m})"

    def adjoint(self) -> "MatrixTuple":
        return MatrixTuple(np.conj(np.swapaxes(self._mats, 1, 2)))

    def hstack(self) -> np.ndarray:
        """``(A_1 A_2 ... A_m)``, shape (n, n m)."""
        return np.concatenate(list(self._mats), axis=1)


def as_tuple(A) -> MatrixTuple:
    return A if isinstance(A, MatrixTuple) else MatrixTuple(A)


@dataclass(frozen=True)
class ScalingPair:
    """``(g, h)`` acting on tuples by ``A -> g^dagger A h``."""

    g: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        g = as_matrix(self.g, "g")
        h = as_matrix(self.h, "h")
        if g.shape != h.shape or g.shape[0] != g.shape[1]:
            raise InvalidScalingError(f"g and h must be square of equal size, "
                                      f"got {g.shape} and {h.shape}")
        for name, M in (("g", g), ("h", h)):
            s = np.linalg.svd(M, compute_uv=False)
            if not s[-1] > 1e-12 * s[0]:
                raise InvalidScalingError(
                    f"{name} is numerically singular (sigma_min/sigma_max={s[-1] / s[0]:.3e})")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "h", h)

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n, dtype=complex), np.eye(n, dtype=complex))

    @classmethod
    def unchecked(cls, g, h):
        """Build a pair without the invertibility check (diverging iterates)."""
        pair = object.__new__(cls)
        object.__setattr__(pair, "g", np.asarray(g, dtype=complex))
        object.__setattr__(pair, "h", np.asarray(h, dtype=complex))
        return pair

    @property
    def n(self):
        return self.g.shape[0]

    def then(self, other: "ScalingPair") -> "ScalingPair":
        """Pair equivalent to scaling by ``self`` and then by ``other``."""
        return ScalingPair(self.g @ other.g, self.h @ other.h)


@dataclass(frozen=True)
class ResidualReport:
    left: float
    right: float
    norm: LpNorm

    @property
    def sum(self) -> float:
        return self.left + self.right

    def as_dict(self):
        return {"left": self.left, "right": self.right, "sum": self.sum,
                "norm": str(self.norm)}


def _check_dim(A: MatrixTuple, X, name="X"):
    if X.shape != (A.n, A.n):
        raise InvalidInputError(f"{name} has shape {X.shape}, tuple has n={A.n}")


def apply_T(A, X) -> np.ndarray:
    """``sum_k A_k X A_k^dagger``."""
    A = as_tuple(A)
    X = hermitian(X)
    _check_dim(A, X)
    Y = np.einsum("kij,jl,kml->im", A.mats, X, A.mats.conj())
    return (Y + Y.conj().T) / 2


def apply_Tstar(A, X) -> np.ndarray:
    """``sum_k A_k^dagger X A_k``."""
    A = as_tuple(A)
    X = hermitian(X)
    _check_dim(A, X)
    Y = np.einsum("kji,jl,klm->im", A.mats.conj(), X, A.mats)
    return (Y + Y.conj().T) / 2


def scale_tuple(A, s: ScalingPair) -> MatrixTuple:
    """Componentwise ``g^dagger A_k h``."""
    A = as_tuple(A)
    if s.n != A.n:
        raise InvalidInputError(f"scaling pair has n={s.n}, tuple has n={A.n}")
    return MatrixTuple(s.g.conj().T @ A.mats @ s.h)


def marginals(A):
    """``(T_A(I), T*_A(I))``."""
    A = as_tuple(A)
    M = A.mats
    left = np.einsum("kij,klj->il", M, M.conj())
    right = np.einsum("kji,kjl->il", M.conj(), M)
    return (left + left.conj().T) / 2, (right + right.conj().T) / 2


def residual_matrices(A):
    I = np.eye(as_tuple(A).n)
    left, right = marginals(A)
    return left - I, right - I


def residual(A, s: ScalingPair | None = None, v=L1) -> ResidualReport:
    """Residual ``||T_B(I) - I||_v`` and ``||T*_B(I) - I||_v`` for ``B = g^dagger A h``."""
    A = as_tuple(A)
    v = as_norm(v)
    B = A if s is None else scale_tuple(A, s)
    L, R = residual_matrices(B)
    return ResidualReport(v(np.linalg.eigvalsh(L)), v(np.linalg.eigvalsh(R)), v)


def check_full_support(A) -> tuple[int, int]:
    """Ranks of ``(A_1 ... A_m)`` and of ``(A_1^dagger ... A_m^dagger)``."""
    A = as_tuple(A)
    return numerical_rank(A.hstack()), numerical_rank(A.adjoint().hstack())


def require_full_support(A):
    A = as_tuple(A)
    left, right = check_full_support(A)
    if left < A.n:
        raise NotFullSupportError(
            f"A C^n has dimension {left} < n={A.n}; reduce the tuple first "
            f"(ncscale.certify.reduce_tuple)", left_rank=left, right_rank=right)
    return left, right


@dataclass(frozen=True)
class LeftNormalized:
    """Result of left-normalising ``A h`` through a pivoted QR factorisation.

    With ``C = (A_1 h ... A_m h)`` and ``C^dagger P = Q R``, the tuple
    ``B_k = Q_k^dagger`` (``Q_k`` the k-th row block of ``Q``) equals
    ``g^dagger A h`` for ``g = P R^{-1}``, and ``T_B(I) = I`` holds to rounding.
    """

    Q: np.ndarray
    R: np.ndarray
    perm: np.ndarray
    log_det_T: float

    def right_residual(self) -> np.ndarray:
        n = self.R.shape[0]
        Qb = self.Q.reshape(-1, n, n)
        S = np.einsum("kij,klj->il", Qb, Qb.conj())
        S = (S + S.conj().T) / 2
        return S - np.eye(n)

    def left_residual(self) -> np.ndarray:
        G = self.Q.conj().T @ self.Q
        return (G + G.conj().T) / 2 - np.eye(self.R.shape[0])

    def g(self) -> np.ndarray:
        n = self.R.shape[0]
        P = np.eye(n)[:, self.perm]
        return P @ scipy.linalg.solve_triangular(self.R, np.eye(n))


def left_normalize(A: MatrixTuple, h) -> LeftNormalized:
    """QR-based left normalisation of ``A h``; accurate for column-graded ``h``.

    Rows of ``C^dagger`` are sorted by norm before the pivoted QR so that
    factors with a wide spread of column scales keep their small directions.
    """
    n = A.n
    Ct = np.conj(np.swapaxes(A.mats @ h, 1, 2)).reshape(-1, n)
    # max-abs, not 2-norm: squaring widely scaled rows overflows
    norms = np.abs(Ct).max(axis=1)
    order = np.argsort(-norms, kind="stable")
    Qs, R, piv = scipy.linalg.qr(Ct[order], mode="economic", pivoting=True)
    Q = np.empty_like(Qs)
    Q[order] = Qs
    d = np.abs(np.diag(R))
    # support is checked on the tuple itself; graded factors legitimately give
    # |R_nn| / |R_11| far below any fixed rank threshold
    if d.size == 0 or not d[-1] > 0:
        raise NotFullSupportError(
            "T_A(X) is numerically singular: A C^n != C^n at this point")
    return LeftNormalized(Q, R, piv, float(2.0 * np.sum(np.log(d))))


def capacity_f(A, X) -> float:
    """``log det T_A(X) - log det X``.

    ``X`` may be a dense positive-definite matrix or a :class:`PDPoint`; the
    determinant is evaluated in the log domain from a graded QR of the square
    root, so points with ``||log X||_inf`` around 50 stay finite.
    """
    A = as_tuple(A)
    require_full_support(A)
    return capacity_at(A, as_point(X))


def capacity_at(A: MatrixTuple, X: PDPoint) -> float:
    """Capacity at a :class:`PDPoint`, skipping the support check."""
    if X.n != A.n:
        raise InvalidInputError(f"point has n={X.n}, tuple has n={A.n}")
    return left_normalize(A, X.factor()).log_det_T - X.log_det()


def grad_f(A, X) -> CotangentVector:
    """Differential ``sum_k A_k^dagger T(X)^{-1} A_k - X^{-1}`` of the capacity.

    ``T(X)`` is inverted through its spectral decomposition; condition numbers
    above 1e14 raise :class:`BoundaryProximityError`.
    """
    A = as_tuple(A)
    require_full_support(A)
    if isinstance(X, PDPoint):
        X = X.matrix
    X = hermitian(X, "X")
    _check_dim(A, X)
    xdec = pd_eig(X)
    TX = apply_T(A, X)
    tdec = herm_eig(TX)
    lo, hi = tdec.values[-1], tdec.values[0]
    if not lo > 0 or hi / lo > GRAD_MAX_COND:
        raise BoundaryProximityError(
            f"T_A(X) has condition number {hi / lo if lo > 0 else math.inf:.3e} > 1e14",
            min_eigenvalue=float(lo), max_eigenvalue=float(hi))
    Tinv = tdec.apply(lambda w: 1.0 / w)
    Xinv = xdec.apply(lambda w: 1.0 / w)
    F = np.einsum("kji,jl,klm->im", A.mats.conj(), Tinv, A.mats) - Xinv
    return CotangentVector(X, (F + F.conj().T) / 2)


def whitened_gradient(A: MatrixTuple, X: PDPoint) -> tuple[np.ndarray, LeftNormalized]:
    """``h^dagger df(X) h`` for ``h = X.factor()``, i.e. ``T*_{g^dagger A h}(I) - I``."""
    ln = left_normalize(A, X.factor())
    return ln.right_residual(), ln


def scaling_from_point(A, X, v=L1) -> tuple[ScalingPair, ResidualReport]:
    """Scaling pair ``(T(X)^{-1/2}, X^{1/2})`` attached to a point of P_n.

    The pair is exactly left-normalised, and its right residual equals
    ``||X^{1/2} df(X) X^{1/2}||_{v*}`` (trace norm for the default ``v = l_1``
    report).  Residuals are computed from the QR form, which stays accurate
    for points given in log form far beyond dense-matrix resolution.
    """
    A = as_tuple(A)
    require_full_support(A)
    X = as_point(X)
    v = as_norm(v)
    ln = left_normalize(A, X.factor())
    L, R = ln.left_residual(), ln.right_residual()
    report = ResidualReport(v(np.linalg.eigvalsh(L)), v(np.linalg.eigvalsh(R)), v)
    # g from the QR is T(X)^{-1/2} times a unitary; take its positive polar part
    W, sig, _ = np.linalg.svd(ln.g())
    g = (W * sig) @ W.conj().T
    pair = ScalingPair((g + g.conj().T) / 2, X.sqrt())
    return pair, report
