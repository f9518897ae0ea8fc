"""Noncommutative rank: shrunk-subspace upper bounds and blow-up lower bounds.

For a tuple ``A`` and a subspace ``U`` write ``AU = sum_k A_k U``.  Any ``U``
gives the upper bound ``ncrank <= n - (dim U - dim AU)``; any random blow-up
``sum_k A_k (x) R_k`` of size ``d`` gives the lower bound
``ncrank >= ceil(rank / d)``.  A :class:`RankCertificate` is issued when the
two coincide.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .engine import FlowConfig, run_gradient_descent
from .errors import InvalidInputError, NotFullSupportError
from .linalg import (complete_basis, herm_eig, hermitian, null_space, numerical_rank, orth,
                     rank_tolerance)
from .manifold import PDPoint
from .operator import (MatrixTuple, ScalingPair, as_tuple, check_full_support,
                       left_normalize, require_full_support)
from .sampling import complex_gaussian, rng_from

BLOWUP_TRIALS = 20
ZERO_BLOCK_TOL = 1e-10
EXHAUSTIVE_MAX_N = 12


@dataclass(frozen=True)
class Subspace:
    """Subspace of C^n held by an orthonormal basis (n x k)."""

    basis: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.basis, dtype=complex)
        if B.ndim != 2:
            raise InvalidInputError("basis must be 2-D")
        if B.shape[1] and np.abs(B.conj().T @ B - np.eye(B.shape[1])).max() > 1e-10:
            raise InvalidInputError("basis columns are not orthonormal")
        object.__setattr__(self, "basis", B)

    @classmethod
    def span(cls, vectors, n=None):
        V = np.asarray(vectors, dtype=complex)
        if V.ndim == 1:
            V = V[:, None]
        if V.size == 0:
            return cls(np.zeros((n if n is not None else V.shape[0], 0), dtype=complex))
        return cls(orth(V))

    @classmethod
    def coordinate(cls, n, indices):
        return cls(np.eye(n, dtype=complex)[:, sorted(indices)])

    @property
    def ambient(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def projector(self):
        return self.basis @ self.basis.conj().T

    def complement(self) -> "Subspace":
        return Subspace(complete_basis(self.basis)[:, self.dim:])

    def principal_angles(self, other: "Subspace") -> np.ndarray:
        if self.dim == 0 or other.dim == 0:
            return np.zeros(0)
        s = np.linalg.svd(self.basis.conj().T @ other.basis, compute_uv=False)
        return np.arccos(np.clip(s, -1.0, 1.0))

    def max_angle(self, other: "Subspace") -> float:
        """Largest principal angle; ``pi/2`` when dimensions differ."""
        if self.dim != other.dim:
            return math.pi / 2
        a = self.principal_angles(other)
        return float(a.max()) if a.size else 0.0


@dataclass(frozen=True)
class Flag:
    """Nested spans of the leading eigenvector columns of a Hermitian matrix."""

    vectors: np.ndarray
    values: np.ndarray

    @classmethod
    def of(cls, H):
        dec = herm_eig(H)
        return cls(dec.vectors, dec.values)

    @property
    def gaps(self) -> np.ndarray:
        return self.values[:-1] - self.values[1:]

    def prefix(self, i) -> Subspace:
        return Subspace(self.vectors[:, :i])


def dim_AU(A, U) -> int:
    """``dim sum_k A_k U``: rank of ``(A_1 B ... A_m B)`` for a basis ``B`` of ``U``."""
    A = as_tuple(A)
    B = U.basis if isinstance(U, Subspace) else np.asarray(U, dtype=complex)
    if B.shape[0] != A.n:
        raise InvalidInputError(f"subspace lives in C^{B.shape[0]}, tuple in C^{A.n}")
    if B.shape[1] == 0:
        return 0
    M = np.concatenate(list(A.mats @ B), axis=1)
    # threshold relative to the tuple, not the image: A U may be pure rounding noise
    smax = np.linalg.norm(A.hstack(), 2)
    return numerical_rank(M, tol=rank_tolerance(M.shape, smax))


def shrinkage(A, U) -> int:
    """``dim U - dim AU``."""
    return (U.dim if isinstance(U, Subspace) else np.shape(U)[1]) - dim_AU(A, U)


# ------------------------------------------------------------------ f^infinity


def _grouped_spectrum(H):
    dec = herm_eig(H)
    lam = dec.values.copy()
    tol = 1e-8 * max(1.0, float(np.abs(lam).max()) if lam.size else 0.0)
    start = 0
    for i in range(1, lam.size + 1):
        if i == lam.size or lam[i - 1] - lam[i] >= tol:
            lam[start:i] = lam[start:i].mean()
            start = i
    return lam, dec.vectors


def finfty_formula(A, H) -> float:
    """Recession function of the capacity at ``I`` in direction ``H``.

    ``sum_i (lambda_i - lambda_{i+1}) (dim AU_i - dim U_i)`` with
    ``lambda_{n+1} = 0`` and ``U_i`` spanned by the top ``i`` eigenvectors.
    Eigenvalues closer than ``1e-8 max(1, ||H||)`` are merged first, so the
    value does not depend on the basis chosen inside an eigenspace.
    """
    A = as_tuple(A)
    require_full_support(A)
    H = hermitian(H, "H")
    lam, V = _grouped_spectrum(H)
    n = A.n
    total = 0.0
    for i in range(1, n + 1):
        gap = lam[i - 1] - (lam[i] if i < n else 0.0)
        if gap != 0.0:
            total += gap * (dim_AU(A, V[:, :i]) - i)
    return float(total)


def finfty_numeric(A, H, t) -> float:
    """Difference quotient ``(f(exp(tH)) - f(I)) / t`` of the capacity.

    ``exp(tH)`` is held in log form and the capacity evaluated from a graded
    QR, so ``t ||H||`` in the thousands is fine.  ``f(cX) = f(X)`` lets the
    spectrum be centred first to keep the factor within double range.
    """
    A = as_tuple(A)
    require_full_support(A)
    H = hermitian(H, "H")
    if not t > 0:
        raise InvalidInputError("t must be positive")
    L = t * H
    L = L - np.eye(A.n) * np.trace(L).real / A.n
    X = PDPoint.from_log(L)
    f_t = left_normalize(A, X.factor()).log_det_T - X.log_det()
    f_0 = left_normalize(A, np.eye(A.n)).log_det_T
    return float((f_t - f_0) / t)


def witness_direction(U: Subspace) -> np.ndarray:
    """``u diag(1, ..., 1, -1, ..., -1) u^dagger`` with ``+1`` on ``U``."""
    return 2 * U.projector() - np.eye(U.ambient)


def round_direction(H, rel_tol=1e-3) -> list:
    """Flag prefixes at eigen-gaps above ``rel_tol * ||H||_inf``, widest gap first."""
    H = hermitian(H, "H")
    flag = Flag.of(H)
    scale = float(np.abs(flag.values).max()) if flag.values.size else 0.0
    if scale <= 1e-12:
        return []
    gaps = flag.gaps
    idx = [i for i in np.argsort(-gaps, kind="stable") if gaps[i] > rel_tol * scale]
    return [flag.prefix(i + 1) for i in idx]


# -------------------------------------------------------------------- blow-ups


def blowup_rank(A, d, trials=BLOWUP_TRIALS, seed=0) -> int:
    """Largest rank of ``sum_k A_k (x) R_k`` over seeded Gaussian ``d x d`` ``R_k``.

    Trial ``i`` draws from ``default_rng(seed + i)``, so every trial can be
    replayed on its own.
    """
    A = as_tuple(A)
    if d < 1 or trials < 1:
        raise InvalidInputError("d and trials must be >= 1")
    best = 0
    for i in range(trials):
        R = complex_gaussian(rng_from(seed + i), (A.m, d, d))
        M = sum(np.kron(Ak, Rk) for Ak, Rk in zip(A.mats, R))
        best = max(best, numerical_rank(M))
        if best == d * A.n:
            break
    return best


# ------------------------------------------------------------------- reduction


@dataclass
class Reduction:
    """``g^dagger A_k h = (B_k 0; 0 0)`` with unitary ``g, h`` and ``B`` of size n'."""

    tuple: MatrixTuple | None
    pair: ScalingPair
    defect: tuple
    n: int

    @property
    def n_reduced(self) -> int:
        return 0 if self.tuple is None else self.tuple.n

    @property
    def offset(self) -> int:
        return self.n - self.n_reduced

    def lift(self, V: Subspace) -> Subspace:
        """Subspace of C^n with shrinkage ``offset + shrinkage_B(V)``."""
        k = self.n_reduced
        pad = np.zeros((self.n, V.dim + self.n - k), dtype=complex)
        pad[:k, :V.dim] = V.basis
        pad[k:, V.dim:] = np.eye(self.n - k)
        return Subspace.span(self.pair.h @ pad, self.n)


def _reduce_once(A: MatrixTuple):
    n = A.n
    rng_basis = orth(A.hstack())
    kernel = null_space(np.concatenate(list(A.mats), axis=0))
    co_kernel = orth(np.eye(n) - kernel @ kernel.conj().T) if kernel.shape[1] else np.eye(n)
    g = complete_basis(rng_basis)
    h = np.concatenate([co_kernel, kernel], axis=1)
    r_left, r_right = rng_basis.shape[1], n - kernel.shape[1]
    C = g.conj().T @ A.mats @ h
    k = max(r_left, r_right)
    mask = np.ones((n, n), dtype=bool)
    mask[:r_left, :r_right] = False
    scale = max(1.0, float(np.abs(A.mats).max()))
    if np.abs(C[:, mask]).max(initial=0.0) > ZERO_BLOCK_TOL * scale:
        raise RuntimeError("reduction failed to produce the zero blocks")
    C[:, mask] = 0
    return (MatrixTuple(C[:, :k, :k]) if k else None), g, h, (n - r_left, n - r_right)


def reduce_tuple(A) -> Reduction:
    """Strip the zero rows/columns of a support-deficient tuple.

    ``g`` lists an orthonormal basis of ``range(A_1 ... A_m)`` first; ``h``
    lists the orthogonal complement of the common kernel first.  The leading
    ``n' = max(rank_left, rank_right)`` block ``B`` then has full support on
    at least one side, and ``corank(A) = (n - n') + corank(B)``.
    """
    A = as_tuple(A)
    left, right = check_full_support(A)
    if left == A.n and right == A.n:
        raise InvalidInputError("tuple has full support; nothing to reduce")
    n = A.n
    g_tot = np.eye(n, dtype=complex)
    h_tot = np.eye(n, dtype=complex)
    B, defect = A, None
    while B is not None:
        l, r = check_full_support(B)
        if defect is not None and (l == B.n or r == B.n):
            break
        B, g, h, d = _reduce_once(B)
        k = g.shape[0]
        G = np.eye(n, dtype=complex)
        Hm = np.eye(n, dtype=complex)
        G[:k, :k] = g
        Hm[:k, :k] = h
        g_tot, h_tot = g_tot @ G, h_tot @ Hm
        defect = defect or d
    return Reduction(B, ScalingPair.unchecked(g_tot, h_tot), defect, n)


# ------------------------------------------------------------- certification


@dataclass
class RankCertificate:
    n: int
    ncrank: int
    certified: bool
    upper_witness: Subspace
    upper_bound: int
    lower_bound: int
    blowup: dict = field(default_factory=dict)

    @property
    def corank(self) -> int:
        return self.n - self.ncrank

    def to_json(self) -> dict:
        W = self.upper_witness.basis
        return {
            "ncrank": self.ncrank,
            "certified": self.certified,
            "upper_witness_basis": np.stack([W.real, W.imag], axis=-1).tolist(),
            "blowup": dict(self.blowup),
            "corank": self.corank,
            "upper_bound": self.upper_bound,
            "lower_bound": self.lower_bound,
        }


def coordinate_subspaces(n):
    for k in range(n + 1):
        for idx in itertools.combinations(range(n), k):
            yield Subspace.coordinate(n, idx)


def exhaustive_coordinate_corank(A) -> tuple[int, Subspace]:
    """``max (dim U - dim AU)`` over all ``2^n`` coordinate subspaces."""
    A = as_tuple(A)
    if A.n > EXHAUSTIVE_MAX_N:
        raise InvalidInputError(f"exhaustive search limited to n <= {EXHAUSTIVE_MAX_N}")
    best, arg = -1, None
    for U in coordinate_subspaces(A.n):
        s = shrinkage(A, U)
        if s > best:
            best, arg = s, U
    return best, arg


def _flag_prefixes(V):
    return [Subspace(V[:, :i]) for i in range(1, V.shape[1])]


def _structural_candidates(A: MatrixTuple):
    n = A.n
    if n <= EXHAUSTIVE_MAX_N:
        yield from coordinate_subspaces(n)
    yield Subspace(null_space(np.concatenate(list(A.mats), axis=0)))
    # flags of the weakest directions of each A_k and of the summed marginals
    for M in list(A.mats) + [sum(Ak.conj().T @ Ak for Ak in A.mats)]:
        _, _, Vh = np.linalg.svd(M)
        yield from _flag_prefixes(Vh[::-1].conj().T)


def _adjoint_lift(A: MatrixTuple, W: Subspace) -> Subspace:
    # (A^dagger W)^perp shrinks by at least as much under A as W does under A^dagger
    if W.dim == 0:
        return Subspace(np.eye(A.n, dtype=complex))
    img = orth(np.concatenate(list(A.adjoint().mats @ W.basis), axis=1))
    return Subspace(complete_basis(img)[:, img.shape[1]:]) if img.shape[1] else \
        Subspace(np.eye(A.n, dtype=complex))


def _flow_candidates(A: MatrixTuple, cfg: FlowConfig):
    try:
        trace = run_gradient_descent(A, cfg=cfg)
    except NotFullSupportError:
        return []
    H = trace.tail_direction()
    if H is None:
        return []
    # the flow's log-direction is largest on the shrunk subspace
    return round_direction(H, cfg.round_tol)


def _best(A, candidates, best):
    for U in candidates:
        s = shrinkage(A, U)
        if best is None or s > best[0]:
            best = (s, U)
    return best


def _upper_bound(A: MatrixTuple, cfg: FlowConfig, target=None, use_flows=True):
    """Largest shrinkage found over candidate subspaces of a support-full tuple."""
    best = _best(A, _structural_candidates(A), None)
    best = _best(A, [_adjoint_lift(A, W) for W in _structural_candidates(A.adjoint())], best)
    if use_flows and (target is None or best[0] < target):
        left, right = check_full_support(A)
        if left == A.n:
            best = _best(A, _flow_candidates(A, cfg), best)
        if right == A.n and (target is None or best[0] < target):
            flows = _flow_candidates(A.adjoint(), cfg)
            best = _best(A, [_adjoint_lift(A, W) for W in flows], best)
    return best


def _lower_bound(A: MatrixTuple, trials, seed, stop_at):
    n = A.n
    best = (0, {"d": 1, "seed": int(seed), "rank": 0})
    for d in range(1, max(1, n - 1) + 1):
        r = blowup_rank(A, d, trials, seed)
        lb = -(-r // d)
        if lb > best[0]:
            best = (lb, {"d": d, "seed": int(seed), "rank": int(r)})
        if best[0] >= stop_at:
            break
    return best


def ncrank(A, cfg: FlowConfig | None = None, trials=BLOWUP_TRIALS, seed=None,
           use_flows=True) -> RankCertificate:
    """Certified noncommutative rank.

    The upper bound comes from the best shrunk subspace among coordinate
    subspaces, singular-vector flags, the common kernel, and flags rounded
    from gradient-flow directions (on the tuple and on its adjoint).
    Support-deficient tuples are reduced first and witnesses lifted back.
    The lower bound is ``max_d ceil(blowup_rank(A, d) / d)`` for
    ``d = 1 .. max(1, n - 1)``.  When the bounds disagree the certificate is
    returned with ``certified=False`` and ``ncrank`` set to the upper bound.
    """
    A = as_tuple(A)
    cfg = cfg or FlowConfig()
    seed = cfg.seed if seed is None else seed
    n = A.n
    lb, blow = _lower_bound(A, trials, seed, n)
    left, right = check_full_support(A)
    if lb == n:
        U = Subspace(np.zeros((n, 0), dtype=complex))
        return RankCertificate(n, n, True, U, n, n, blow)
    if left == n or right == n:
        gain, U = _upper_bound(A, cfg, target=n - lb, use_flows=use_flows)
    else:
        red = reduce_tuple(A)
        if red.tuple is None:
            gain, U = n, Subspace(np.eye(n, dtype=complex))
        else:
            g_b, V = _upper_bound(red.tuple, cfg, target=n - lb - red.offset,
                                  use_flows=use_flows)
            U = red.lift(V)
            gain = shrinkage(A, U)
    ub = n - gain
    return RankCertificate(n, ub, ub == lb, U, ub, lb, blow)


def min_finfty_ball(A, cfg: FlowConfig | None = None, seed=None):
    """``inf_{||H||_inf <= 1} f^inf(H) = 2 min_U (dim AU - dim U)``.

    Returns ``(value, witness, certified)``; the minimising direction is
    :func:`witness_direction` of the witness.
    """
    A = as_tuple(A)
    require_full_support(A)
    cert = ncrank(A, cfg, seed=seed)
    return -2.0 * cert.corank, cert.upper_witness, cert.certified


def corank_via_reduction(A, cfg: FlowConfig | None = None, seed=None) -> tuple[int, bool]:
    """``(n - n') + corank(B)`` for a support-deficient tuple; returns ``(corank, certified)``."""
    red = reduce_tuple(A)
    if red.tuple is None:
        return red.n, True
    cert = ncrank(red.tuple, cfg, seed=seed)
    return red.offset + cert.corank, cert.certified
