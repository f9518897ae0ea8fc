"""Iterative drivers that push the capacity down and track scaling residuals.

Three engines share one trace format:

* :func:`run_sinkhorn` -- alternating left/right normalisation (operator Sinkhorn);
* :func:`run_gradient_descent` -- d_2-Riemannian gradient descent with Armijo
  backtracking along geodesics;
* :func:`run_minimizing_movement` -- implicit Euler steps for the smoothed
  l_p Finsler metric, the discrete stand-in for the curve of maximal slope.

Iterates of the two capacity flows are :class:`~ncscale.manifold.PDPoint`
objects, so runs can travel all the way to the numerical boundary of P_n
(where they stop by design on rank-deficient tuples).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize

from .errors import (BoundaryProximityError, InvalidInputError,
                     NotFullSupportError, StallError)
from .linalg import L1, L2, LINF, LpNorm, as_norm, herm_eig, hermitian, null_space
from .manifold import PDPoint, as_point, point_dist
from .operator import (MatrixTuple, ScalingPair, as_tuple, check_full_support,
                       left_normalize, marginals, require_full_support)

ARMIJO = 1e-4
MAX_HALVINGS = 30
STAGNATION_WINDOW = 50
STAGNATION_RTOL = 1e-12
DIRECTION_MIN_DIST = 1e-6
TAIL_WINDOW = 10
SCALING_RTOL = 1e-12


@dataclass(frozen=True)
class FlowConfig:
    """Knobs shared by all engines.

    ``norm`` is used for the stopping test and residual reporting;
    ``smoothing_p`` and ``mm_tau`` only affect the minimizing movement;
    ``round_tol`` is the relative eigen-gap used when rounding flow directions
    to subspace flags.
    """

    max_iters: int = 500
    step_size: float = 0.1
    tolerance: float = 1e-6
    norm: LpNorm = L1
    smoothing_p: float = 8.0
    mm_tau: float = 0.1
    seed: int = 0
    round_tol: float = 1e-3
    inner_tol: float = 1e-6
    inner_max_iters: int = 500

    def __post_init__(self):
        object.__setattr__(self, "norm", as_norm(self.norm))
        if int(self.max_iters) < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if not self.tolerance >= 0:
            raise InvalidInputError("tolerance must be >= 0")
        if not self.step_size > 0 or not self.mm_tau > 0:
            raise InvalidInputError("step_size and mm_tau must be positive")
        if not self.smoothing_p >= 2:
            raise InvalidInputError("smoothing_p must be >= 2 (or inf)")

    def as_dict(self):
        return {"max_iters": self.max_iters, "step_size": self.step_size,
                "tolerance": self.tolerance, "norm": str(self.norm),
                "smoothing_p": self.smoothing_p, "mm_tau": self.mm_tau,
                "seed": self.seed, "round_tol": self.round_tol}


@dataclass
class FlowRecord:
    step: int
    point: object  # PDPoint for capacity flows, ScalingPair for Sinkhorn
    f_value: float
    residual: float  # left + right in cfg.norm
    residual_l1: float
    residual_l2: float
    slope: float  # ||X^{1/2} df X^{1/2}||_1, the l_inf-dual slope
    dist: float  # d_inf from the start point
    direction: np.ndarray | None
    eta: float | None = None
    downgraded: bool = False
    l2_sides: tuple = (math.nan, math.nan)

    def direction_eigs(self):
        if self.direction is None:
            return None
        return np.linalg.eigvalsh(self.direction)[::-1]

    def to_json(self):
        eigs = self.direction_eigs()
        return {"step": self.step, "f": self.f_value, "res_l1": self.residual_l1,
                "slope": self.slope, "dist": self.dist,
                "direction_eigs": None if eigs is None else [float(x) for x in eigs]}


@dataclass
class FlowTrace:
    engine: str
    records: list = field(default_factory=list)
    stop_reason: str = "running"
    config: FlowConfig | None = None

    def __len__(self):
        return len(self.records)

    @property
    def final(self) -> FlowRecord:
        return self.records[-1]

    def best(self, key="residual_l1") -> FlowRecord:
        return min(self.records, key=lambda r: getattr(r, key))

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def tail_direction(self, window=TAIL_WINDOW):
        """Mean of ``log X`` over the last ``window`` iterates, normalised to unit d_inf.

        Returns ``None`` when the iterates never left a 1e-6 ball around I.
        """
        pts = [r.point for r in self.records if r.direction is not None]
        if not pts:
            return None
        pts = pts[-window:]
        if isinstance(pts[0], ScalingPair):
            pts = [PDPoint.from_factor(p.h) for p in pts]
        L = np.mean([p.log() for p in pts], axis=0)
        scale = np.abs(np.linalg.eigvalsh(L)).max()
        if scale <= DIRECTION_MIN_DIST:
            return None
        return L / scale

    def write_jsonl(self, fp):
        for r in self.records:
            fp.write(json.dumps(r.to_json(), sort_keys=False) + "\n")

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_json()) + "\n" for r in self.records)


def _direction(X: PDPoint):
    d = float(np.abs(X.log_values).max())
    if d <= DIRECTION_MIN_DIST:
        return None
    return X.log() / d


def _eigs_norm(M, v: LpNorm) -> float:
    return v(np.linalg.eigvalsh(M))


# --------------------------------------------------------------------------- Sinkhorn


def _inv_sqrt_marginal(M, side):
    dec = herm_eig(M)
    w = dec.values
    tol = 16 * M.shape[0] * np.finfo(float).eps * max(w[0], 0.0)
    if not w[-1] > tol:
        kernel = null_space(M, tol=max(tol, 0.0))
        raise StallError(f"{side} marginal is singular (lambda_min={w[-1]:.3e})",
                         side=side, defect=kernel)
    return dec.apply(lambda x: 1.0 / np.sqrt(x))


def sinkhorn_step(A, s: ScalingPair | None = None) -> ScalingPair:
    """One full operator-Sinkhorn step: normalise ``T(I)``, then ``T*(I)``.

    ``g <- g T_{g^dagger A h}(I)^{-1/2}`` followed by
    ``h <- h T*_{g^dagger A h}(I)^{-1/2}``.  A singular marginal raises
    :class:`StallError` carrying an orthonormal basis of its kernel.
    """
    A = as_tuple(A)
    s = ScalingPair.identity(A.n) if s is None else s
    pair, _ = _sinkhorn_update(A.mats, s.g, s.h, s.g.conj().T @ A.mats @ s.h)
    return ScalingPair.unchecked(*pair)


def _sinkhorn_update(mats, g, h, B):
    left, _ = marginals(B)
    Mg = _inv_sqrt_marginal(left, "left")
    g = g @ Mg
    B = Mg @ B
    _, right = marginals(B)
    Mh = _inv_sqrt_marginal(right, "right")
    h = h @ Mh
    B = B @ Mh
    return (g, h), B


def _record_from_scaled(step, A, g, h, B, start_h, cfg):
    L, R = (M - np.eye(A.n) for M in marginals(B))
    l1 = _eigs_norm(L, L1) + _eigs_norm(R, L1)
    l2 = _eigs_norm(L, L2) + _eigs_norm(R, L2)
    res = _eigs_norm(L, cfg.norm) + _eigs_norm(R, cfg.norm)
    try:
        X = PDPoint.from_factor(h)
        ln = left_normalize(A, X.factor())
        f = ln.log_det_T - X.log_det()
        slope = _eigs_norm(ln.right_residual(), L1)
        dist = point_dist(start_h, X, LINF)
        direction = _direction(X)
    except (NotFullSupportError, np.linalg.LinAlgError, ValueError):
        f, slope, dist, direction = math.nan, math.nan, math.nan, None
    return FlowRecord(step, ScalingPair.unchecked(g, h), f, res, l1, l2, slope, dist, direction,
                      l2_sides=(_eigs_norm(L, L2), _eigs_norm(R, L2)))


def _well_conditioned(M) -> bool:
    sig = np.linalg.svd(M, compute_uv=False)
    return bool(sig[-1] > SCALING_RTOL * sig[0])


def run_sinkhorn(A, cfg: FlowConfig | None = None, start: ScalingPair | None = None) -> FlowTrace:
    """Alternate left/right normalisation until the residual drops below tolerance.

    Both supports must be full; a support-deficient tuple raises
    :class:`NotFullSupportError` (reduce it first with
    :func:`ncscale.certify.reduce_tuple`).  A singular marginal raises
    :class:`StallError` with the partial trace attached as ``err.trace``.
    The run stops with ``stop_reason == "boundary"`` once ``g`` or ``h`` would
    cross the invertibility threshold of :class:`ScalingPair`, which is how
    Sinkhorn ends on tuples of positive corank.
    """
    A = as_tuple(A)
    cfg = cfg or FlowConfig()
    left, right = check_full_support(A)
    if left < A.n or right < A.n:
        raise NotFullSupportError(
            f"Sinkhorn needs full support on both sides, got ranks ({left}, {right}); "
            "use ncscale.certify.reduce_tuple", left_rank=left, right_rank=right)
    trace = FlowTrace("sinkhorn", config=cfg)
    s = start or ScalingPair.identity(A.n)
    g, h = s.g, s.h
    B = g.conj().T @ A.mats @ h
    X0 = PDPoint.from_factor(h)
    trace.records.append(_record_from_scaled(0, A, g, h, B, X0, cfg))
    for it in range(1, cfg.max_iters + 1):
        if trace.final.residual <= cfg.tolerance:
            trace.stop_reason = "converged"
            return trace
        try:
            (g_new, h_new), B_new = _sinkhorn_update(A.mats, g, h, B)
        except StallError as err:
            trace.stop_reason = "stall"
            err.trace = trace
            raise
        if not (_well_conditioned(g_new) and _well_conditioned(h_new)):
            # past this point the updated tuple no longer equals g^dagger A h in floating point
            trace.stop_reason = "boundary"
            return trace
        (g, h), B = (g_new, h_new), B_new
        trace.records.append(_record_from_scaled(it, A, g, h, B, X0, cfg))
    trace.stop_reason = "converged" if trace.final.residual <= cfg.tolerance else "max_iters"
    return trace


# --------------------------------------------------------------- capacity descent


def _evaluate(A: MatrixTuple, X: PDPoint):
    """Capacity and whitened differential ``h^dagger df h`` at ``X``."""
    ln = left_normalize(A, X.factor())
    return ln.log_det_T - X.log_det(), ln.right_residual(), ln.left_residual()


def _capacity_record(step, X, f, R, Lres, X0, cfg, eta=None, downgraded=False):
    l1 = _eigs_norm(Lres, L1) + _eigs_norm(R, L1)
    l2 = _eigs_norm(Lres, L2) + _eigs_norm(R, L2)
    res = _eigs_norm(Lres, cfg.norm) + _eigs_norm(R, cfg.norm)
    return FlowRecord(step, X, float(f), res, l1, l2, _eigs_norm(R, L1),
                      point_dist(X0, X, LINF), _direction(X), eta, downgraded,
                      (_eigs_norm(Lres, L2), _eigs_norm(R, L2)))


def _stagnated(trace):
    if len(trace.records) <= STAGNATION_WINDOW:
        return False
    f_old = trace.records[-1 - STAGNATION_WINDOW].f_value
    f_new = trace.final.f_value
    return (f_old - f_new) < STAGNATION_RTOL * max(1.0, abs(f_old))


def _gradient_step(A, X, f, R, eta0):
    """Armijo-backtracked geodesic step along ``-R``; returns (X, f, eta) or None."""
    g2 = float(np.sum(np.abs(R) ** 2))
    eta = eta0
    for _ in range(MAX_HALVINGS + 1):
        Xn = X.move(-R, eta)
        if not Xn.near_boundary():
            try:
                fn = _evaluate(A, Xn)[0]
            except NotFullSupportError:
                fn = math.inf
            if fn <= f - ARMIJO * eta * g2:
                return Xn, fn, eta
        eta /= 2
    return None


def _start(A, X0):
    A = as_tuple(A)
    require_full_support(A)
    X = PDPoint.identity(A.n) if X0 is None else as_point(X0)
    if X.n != A.n:
        raise InvalidInputError(f"start point has n={X.n}, tuple has n={A.n}")
    return A, X


def run_gradient_descent(A, X0=None, cfg: FlowConfig | None = None) -> FlowTrace:
    """d_2-Riemannian gradient descent on the capacity.

    Each step moves along the geodesic ``X <- gamma(X, -X df(X) X, eta)``;
    ``eta`` starts at ``cfg.step_size`` and is halved (at most 30 times) until
    the Armijo condition with constant 1e-4 holds.  The run stops on the
    residual tolerance, on stagnation (relative f decrease below 1e-12 over
    50 steps), at ``max_iters``, or when the next iterate would cross the PD
    tolerance (``stop_reason == "boundary"``, the expected outcome when the
    tuple has positive nc-corank).
    """
    A, X = _start(A, X0)
    cfg = cfg or FlowConfig()
    X0 = X
    trace = FlowTrace("gd", config=cfg)
    f, R, Lres = _evaluate(A, X)
    trace.records.append(_capacity_record(0, X, f, R, Lres, X0, cfg))
    for it in range(1, cfg.max_iters + 1):
        if trace.final.residual <= cfg.tolerance:
            trace.stop_reason = "converged"
            return trace
        if _stagnated(trace):
            trace.stop_reason = "stagnation"
            return trace
        step = _gradient_step(A, X, f, R, cfg.step_size)
        if step is None:
            trace.stop_reason = "boundary" if X.move(-R, cfg.step_size).near_boundary() \
                else "line_search"
            return trace
        X, f, eta = step
        f, R, Lres = _evaluate(A, X)
        trace.records.append(_capacity_record(it, X, f, R, Lres, X0, cfg, eta))
    trace.stop_reason = "converged" if trace.final.residual <= cfg.tolerance else "max_iters"
    return trace


# ------------------------------------------------------------ minimizing movement


def _herm_to_vec(M):
    n = M.shape[0]
    iu = np.triu_indices(n, 1)
    return np.concatenate([np.real(np.diag(M)), np.sqrt(2) * np.real(M[iu]),
                           np.sqrt(2) * np.imag(M[iu])])


def _vec_to_herm(x, n):
    iu = np.triu_indices(n, 1)
    k = len(iu[0])
    S = np.diag(x[:n]).astype(complex)
    off = (x[n:n + k] + 1j * x[n + k:]) / np.sqrt(2)
    S[iu] = off
    S[(iu[1], iu[0])] = off.conj()
    return S


def _exp_divided_differences(a):
    """``K_ij = (e^{a_i} - e^{a_j}) / (a_i - a_j)``, stable at ties."""
    mid = (a[:, None] + a[None, :]) / 2
    half = (a[:, None] - a[None, :]) / 2
    safe = np.where(half == 0, 1.0, half)
    ratio = np.where(np.abs(half) < 1e-8, 1.0 + half ** 2 / 6, np.sinh(safe) / safe)
    return np.exp(mid) * ratio


def _lp_sq_grad(lam, p):
    """Gradient of ``||lam||_p^2`` (p >= 2, or inf via a subgradient)."""
    a = np.abs(lam)
    top = a.max() if a.size else 0.0
    if top == 0.0:
        return np.zeros_like(lam), 0.0
    if math.isinf(p):
        g = np.zeros_like(lam)
        i = int(np.argmax(a))
        g[i] = 2 * lam[i]
        return g, top ** 2
    r = a / top
    norm = top * np.sum(r ** p) ** (1 / p)
    g = 2 * norm * (r * top / norm) ** (p - 1) * np.sign(lam)
    return g, norm ** 2


class _ProximalObjective:
    """``S -> f(h e^S h^dagger) + ||S||_p^2 / (2 tau)`` on Hermitian ``S``."""

    def __init__(self, A, X: PDPoint, p, tau):
        self.A, self.X, self.p, self.tau = A, X, p, tau
        self.h = X.factor()
        self.n = A.n

    def __call__(self, x):
        S = _vec_to_herm(x, self.n)
        dec = herm_eig(S)
        a = dec.values
        V = dec.vectors
        half = (V * np.exp(a / 2)) @ V.conj().T
        try:
            ln = left_normalize(self.A, self.h @ half)
        except NotFullSupportError:
            return math.inf, np.zeros_like(x)
        f = ln.log_det_T - self.X.log_det() - a.sum()
        # h^dagger df h from the whitened differential at h e^{S/2}
        ihalf = (V * np.exp(-a / 2)) @ V.conj().T
        G = ihalf @ ln.right_residual() @ ihalf
        Gt = V.conj().T @ G @ V
        grad_f = V @ (Gt * _exp_divided_differences(a)) @ V.conj().T
        pg, sq = _lp_sq_grad(a, self.p)
        grad = grad_f + (V * (pg / (2 * self.tau))) @ V.conj().T
        grad = (grad + grad.conj().T) / 2
        return f + sq / (2 * self.tau), _herm_to_vec(grad)


def _proximal_step(A, X, cfg):
    obj = _ProximalObjective(A, X, cfg.smoothing_p, cfg.mm_tau)
    x0 = np.zeros(A.n * A.n)
    res = scipy.optimize.minimize(obj, x0, jac=True, method="L-BFGS-B",
                                  options={"gtol": cfg.inner_tol, "ftol": 1e-15,
                                           "maxiter": cfg.inner_max_iters})
    gnorm = float(np.linalg.norm(res.jac)) if res.jac is not None else math.inf
    ok = np.isfinite(res.fun) and (res.success or gnorm <= cfg.inner_tol) \
        and res.fun <= obj(x0)[0]
    return _vec_to_herm(res.x, A.n), ok


def run_minimizing_movement(A, X0=None, cfg: FlowConfig | None = None) -> FlowTrace:
    """Implicit Euler (minimizing movement) scheme for the capacity.

    ``X_{k+1} = argmin_Y f(Y) + d_p(X_k, Y)^2 / (2 tau)`` with
    ``p = cfg.smoothing_p`` standing in for the non-smooth l_inf tangent norm.
    Writing ``Y = h e^S h^dagger`` (``h`` a square root of ``X_k``) turns the
    distance into ``||S||_p``; the inner problem is solved in ``S`` by L-BFGS
    to gradient tolerance ``cfg.inner_tol``.  When the inner solve fails the
    step falls back to one backtracked gradient step and the record is
    flagged ``downgraded``.  Stopping rules match :func:`run_gradient_descent`.
    """
    A, X = _start(A, X0)
    cfg = cfg or FlowConfig()
    X0 = X
    trace = FlowTrace("mm", config=cfg)
    f, R, Lres = _evaluate(A, X)
    trace.records.append(_capacity_record(0, X, f, R, Lres, X0, cfg))
    for it in range(1, cfg.max_iters + 1):
        if trace.final.residual <= cfg.tolerance:
            trace.stop_reason = "converged"
            return trace
        if _stagnated(trace):
            trace.stop_reason = "stagnation"
            return trace
        S, ok = _proximal_step(A, X, cfg)
        downgraded = False
        Xn = X.move(S, 1.0) if ok else None
        if Xn is not None and Xn.near_boundary():
            trace.stop_reason = "boundary"
            return trace
        if Xn is None:
            step = _gradient_step(A, X, f, R, cfg.step_size)
            if step is None:
                trace.stop_reason = "boundary" if X.move(-R, cfg.step_size).near_boundary() \
                    else "line_search"
                return trace
            Xn, downgraded = step[0], True
        X = Xn
        f, R, Lres = _evaluate(A, X)
        trace.records.append(_capacity_record(it, X, f, R, Lres, X0, cfg,
                                              cfg.mm_tau, downgraded))
    trace.stop_reason = "converged" if trace.final.residual <= cfg.tolerance else "max_iters"
    return trace


ENGINES = {"sinkhorn": run_sinkhorn, "gd": run_gradient_descent,
           "mm": run_minimizing_movement}
