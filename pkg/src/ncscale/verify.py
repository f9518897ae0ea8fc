"""Randomised property suites with per-check counts and worst violations.

Each suite returns a :class:`SuiteResult`; ``ncscale verify --suite NAME``
prints its JSON form.  Sample sizes and tolerances default to the values the
acceptance tests use.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .certify import (Subspace, blowup_rank, dim_AU, finfty_formula, finfty_numeric,
                      min_finfty_ball, ncrank, reduce_tuple, round_direction)
from .engine import FlowConfig, run_minimizing_movement, run_sinkhorn
from .instances import e4, random_full, skew3, zero_block
from .linalg import L1, L2, LINF, LpNorm, diag_project, dual_norm, schatten_norm
from .manifold import (PDPoint, cotangent_dual_norm, finsler_dist, geodesic,
                       tangent_norm)
from .operator import (MatrixTuple, ScalingPair, capacity_f, check_full_support, grad_f,
                       residual, scaling_from_point)
from .sampling import (complex_gaussian, random_gl, random_hermitian, random_pd,
                       random_unitary, rng_from)

NORMS = (L1, L2, LpNorm(3), LINF)
ROUNDING_SLACK = 1e-12


@dataclass
class Check:
    name: str
    tol: float
    count: int = 0
    failures: int = 0
    max_violation: float = 0.0

    def add(self, violation):
        """Record one sample; ``violation <= tol`` passes."""
        violation = float(violation)
        self.count += 1
        if not violation <= self.tol:  # NaN fails
            self.failures += 1
        if math.isnan(violation) or violation > self.max_violation:
            self.max_violation = violation

    @property
    def passed(self) -> bool:
        return self.count > 0 and self.failures == 0

    def as_dict(self):
        return {"name": self.name, "count": self.count, "failures": self.failures,
                "max_violation": self.max_violation, "tol": self.tol,
                "passed": self.passed}


@dataclass
class SuiteResult:
    name: str
    checks: dict = field(default_factory=dict)
    elapsed: float = 0.0
    info: dict = field(default_factory=dict)

    def check(self, name, tol) -> Check:
        if name not in self.checks:
            self.checks[name] = Check(name, tol)
        return self.checks[name]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def as_dict(self):
        return {"suite": self.name, "passed": self.passed, "elapsed": self.elapsed,
                "checks": [c.as_dict() for c in self.checks.values()],
                "info": self.info}


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.elapsed = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def dual_optimal(lam, v: LpNorm) -> np.ndarray:
    """``y`` with ``v*(y) = 1`` and ``<lam, y> = v(lam)``."""
    lam = np.asarray(lam, dtype=float)
    y = np.zeros_like(lam)
    if not np.any(lam):
        return y
    if v.p == 1:
        return np.where(lam >= 0, 1.0, -1.0)
    if math.isinf(v.p):
        i = int(np.argmax(np.abs(lam)))
        y[i] = np.sign(lam[i])
        return y
    a = np.abs(lam) / np.abs(lam).max()
    y = np.sign(lam) * a ** (v.p - 1)
    return y / v.dual(y)


# ------------------------------------------------------------------- geometry


@_timed
def suite_norms(samples=500, ns=range(2, 7), norms=NORMS, tol=1e-9, seed=0) -> SuiteResult:
    """Norm axioms, unitary invariance, duality pairing and Schur-Horn contraction."""
    res = SuiteResult("norms")
    rng = rng_from(seed)
    for n in ns:
        for v in norms:
            for _ in range(samples):
                H = random_hermitian(rng, n, scale=rng.uniform(0.1, 3))
                Y = random_hermitian(rng, n, scale=rng.uniform(0.1, 3))
                w = random_unitary(rng, n)
                a = rng.standard_normal()
                nH, nY = schatten_norm(H, v), schatten_norm(Y, v)
                res.check("nonnegative", tol).add(-min(nH, 0.0))
                res.check("definite", tol).add(schatten_norm(np.zeros((n, n)), v))
                res.check("homogeneous", tol).add(abs(schatten_norm(a * H, v) - abs(a) * nH))
                res.check("triangle", tol).add(schatten_norm(H + Y, v) - nH - nY)
                res.check("unitary_invariance", tol).add(
                    abs(schatten_norm(w @ H @ w.conj().T, v) - nH))
                pairing = float(np.real(np.trace(H @ Y)))
                res.check("duality_pairing", tol).add(pairing - nH * dual_norm(Y, v))
                lam, u = np.linalg.eigh(H)
                Ystar = (u * dual_optimal(lam, v)) @ u.conj().T
                res.check("duality_attained", tol).add(
                    abs(float(np.real(np.trace(H @ Ystar))) - nH)
                    + abs(dual_norm(Ystar, v) - 1.0))
                res.check("diagonal_contraction", tol).add(v(diag_project(H)) - nH)
                if v.p == 1:
                    sv = np.linalg.svd(H, compute_uv=False).sum()
                    res.check("trace_norm_singular_values", tol).add(abs(nH - sv))
    return res


@_timed
def suite_finsler(triples=200, n_gl=100, norms=NORMS, tol=1e-8, seed=0) -> SuiteResult:
    """Symmetry, triangle inequality, GL-invariance and geodesic distance realisation."""
    res = SuiteResult("finsler")
    rng = rng_from(seed)
    for v in norms:
        for _ in range(triples):
            n = int(rng.integers(2, 6))
            X, Y, Z = (random_pd(rng, n, spread=1.0) for _ in range(3))
            dxy = finsler_dist(X, Y, v)
            res.check("symmetry", tol).add(abs(dxy - finsler_dist(Y, X, v)))
            res.check("identity", tol).add(finsler_dist(X, X, v))
            res.check("triangle", tol).add(
                finsler_dist(X, Z, v) - dxy - finsler_dist(Y, Z, v))
            H = random_hermitian(rng, n)
            s, t = rng.uniform(-1.5, 1.5, 2)
            speed = tangent_norm(X, H, v)
            d = finsler_dist(geodesic(X, H, s), geodesic(X, H, t), v)
            res.check("geodesic_realisation", tol).add(abs(d - abs(s - t) * speed))
        for _ in range(n_gl):
            n = int(rng.integers(2, 6))
            X, Y = random_pd(rng, n), random_pd(rng, n)
            g = random_gl(rng, n, spread=1.0)
            H = random_hermitian(rng, n)
            F = random_hermitian(rng, n)
            gX, gY = g @ X @ g.conj().T, g @ Y @ g.conj().T
            res.check("gl_invariance_dist", tol).add(
                abs(finsler_dist(gX, gY, v) - finsler_dist(X, Y, v)))
            res.check("gl_invariance_tangent", tol).add(
                abs(tangent_norm(gX, g @ H @ g.conj().T, v) - tangent_norm(X, H, v)))
            gi = np.linalg.inv(g)
            res.check("gl_invariance_cotangent", tol).add(
                abs(cotangent_dual_norm(gX, gi.conj().T @ F @ gi, v)
                    - cotangent_dual_norm(X, F, v)))
    return res


# ------------------------------------------------------------------ capacity


def _random_full_support(rng, n, m):
    while True:
        A = MatrixTuple(complex_gaussian(rng, (m, n, n)))
        if np.linalg.matrix_rank(A.hstack()) == n:
            return A


@_timed
def suite_gradcheck(samples=50, eps=1e-5, tol=1e-5, slope_tol=1e-8, seed=0) -> SuiteResult:
    """Central differences of the capacity against ``grad_f``, plus the slope identity."""
    res = SuiteResult("gradcheck")
    rng = rng_from(seed)
    for _ in range(samples):
        # n = 1 or m = 1 makes f constant, where a relative error is undefined
        n, m = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        A = _random_full_support(rng, n, m)
        X = random_pd(rng, n, spread=1.0)
        H = random_hermitian(rng, n)
        H /= np.linalg.norm(H)
        dF = grad_f(A, X)
        an = dF(H)
        fd = (capacity_f(A, X + eps * H) - capacity_f(A, X - eps * H)) / (2 * eps)
        res.check("finite_difference_rel", tol).add(abs(fd - an) / abs(an))
        _, report = scaling_from_point(A, X)
        res.check("slope_identity", slope_tol).add(
            abs(report.right - cotangent_dual_norm(X, dF.form, LINF)))
        res.check("left_normalised", 1e-9).add(report.left)
    return res


def _structured(rng, n_max, m_max):
    """Random tuple, half the time with a rotated zero block."""
    n = int(rng.integers(2, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    A = complex_gaussian(rng, (m, n, n))
    if rng.random() < 0.5:
        k = int(rng.integers(1, n))
        l = int(rng.integers(0, k))
        A[:, : n - l, :k] = 0
        A = random_unitary(rng, n) @ A @ random_unitary(rng, n)
    return MatrixTuple(A)


@_timed
def suite_finfty(instances=100, n_max=4, m_max=3, tol=5e-2, seed=0) -> SuiteResult:
    """Recession formula against the difference quotient at ``t = 1000 / ||H||``."""
    res = SuiteResult("finfty")
    rng = rng_from(seed)
    done = 0
    while done < instances:
        A = _structured(rng, n_max, m_max)
        if np.linalg.matrix_rank(A.hstack()) < A.n:
            continue
        done += 1
        H = random_hermitian(rng, A.n)
        if rng.random() < 0.5:
            # align H with a shrunk subspace so the formula is not trivially flat
            cert = ncrank(A, use_flows=False)
            if cert.upper_witness.dim:
                H = 2 * cert.upper_witness.projector() - np.eye(A.n) + 0.3 * H
        hn = float(np.abs(np.linalg.eigvalsh(H)).max())
        t = 1000.0 / max(1.0, hn)
        formula = finfty_formula(A, H)
        res.check("formula_vs_limit", tol).add(abs(formula - finfty_numeric(A, H, t)))
        vals = [finfty_numeric(A, H, s) for s in (1.0, 10.0, 100.0)]
        res.check("monotone_in_t", 1e-10).add(max(vals[0] - vals[1], vals[1] - vals[2]))
        a = rng.uniform(0, 5)
        res.check("positive_homogeneity", 1e-9).add(
            abs(finfty_formula(A, a * H) - a * formula))
    return res


@_timed
def suite_weak_duality(samples=1000, n_max=5, tol=1e-8, seed=0) -> SuiteResult:
    """``residual_l1(g^dagger A h) >= 2 (dim U - dim AU)`` for random data."""
    res = SuiteResult("weak-duality")
    rng = rng_from(seed)
    for i in range(samples):
        n = int(rng.integers(1, n_max + 1))
        m = int(rng.integers(1, 4))
        A = complex_gaussian(rng, (m, n, n))
        kind = i % 3
        if kind == 0 and n > 1:
            k = int(rng.integers(1, n + 1))
            l = int(rng.integers(0, k))
            A[:, : n - l, :k] = 0
            P, Q = random_unitary(rng, n), random_unitary(rng, n)
            A = P @ A @ Q
            U = Subspace(Q.conj().T[:, :k])
        elif kind == 1:
            k = int(rng.integers(0, n + 1))
            U = Subspace.coordinate(n, rng.permutation(n)[:k])
        else:
            k = int(rng.integers(1, n + 1))
            U = Subspace.span(complex_gaussian(rng, (n, k)))
        A = MatrixTuple(A)
        spread = rng.uniform(0, 3)
        s = ScalingPair(random_gl(rng, n, spread), random_gl(rng, n, spread))
        bound = 2 * (U.dim - dim_AU(A, U))
        res.check("residual_bound", tol).add(bound - residual(A, s, L1).sum)
    return res


def zero_block_shapes(n_max=6, coranks=(1, 2)):
    """``(n, k, l)`` with ``k - l`` in ``coranks`` and ``k < n`` (full left support)."""
    return [(n, l + c, l) for n in range(2, n_max + 1) for c in coranks
            for l in range(0, n) if l + c < n]


def ray_direction(n, k) -> np.ndarray:
    return np.diag(np.r_[np.ones(k), -np.ones(n - k)])


@_timed
def suite_attainment(shapes=None, t=20.0, slack=0.05, seed=0, certify=True) -> SuiteResult:
    """Residual of ``scaling_from_point`` along the ray ``exp(t H_U)`` on zero-block tuples."""
    res = SuiteResult("duality")
    shapes = zero_block_shapes() if shapes is None else shapes
    per_shape = []
    for (n, k, l) in shapes:
        t0 = time.perf_counter()
        inst = zero_block(n, k, l, seed=seed)
        c = k - l
        if certify:
            cert = ncrank(inst.tuple)
            res.check("certified_at_generation", 0).add(
                0 if cert.certified and cert.ncrank == inst.known_ncrank else 1)
        X = PDPoint.from_log(t * ray_direction(n, k))
        _, rep = scaling_from_point(inst.tuple, X)
        viol = max(2 * c - rep.sum, rep.sum - (2 * c + slack))
        res.check("ray_residual", 0.0).add(viol)
        per_shape.append({"n": n, "k": k, "l": l, "corank": c, "residual": rep.sum,
                          "elapsed": time.perf_counter() - t0})
    res.info["shapes"] = per_shape
    return res


def _rect_sinkhorn(B, iters=2000, tol=1e-13):
    """Column scaling ``c`` with ``sum B c c^dagger B^dagger ~ I`` and col marginal ``(p/q) I``."""
    m, p, q = B.shape
    r_tot = np.eye(p, dtype=complex)
    c_tot = np.eye(q, dtype=complex)
    for _ in range(iters):
        L = np.einsum("kij,klj->il", B, B.conj())
        w, V = np.linalg.eigh(L)
        r = (V / np.sqrt(w)) @ V.conj().T
        B = r @ B
        r_tot = r @ r_tot
        R = np.einsum("kji,kjl->il", B.conj(), B) * (q / p)
        w, V = np.linalg.eigh(R)
        c = (V / np.sqrt(w)) @ V.conj().T
        B = B @ c
        c_tot = c_tot @ c
        if np.abs(R - np.eye(q)).max() < tol:
            break
    return c_tot


def prescaled_ray(A: MatrixTuple, k, l, t) -> PDPoint:
    """Ray through ``h = diag(e^{t/2} h_U, e^{-t/2} h_perp)`` with block-balanced ``h_U, h_perp``.

    ``h_U`` balances the block ``A[:, n-l:, :k]`` and ``h_perp`` the block
    ``A[:, :n-l, k:]`` so that both become rectangular doubly stochastic.
    """
    n = A.n
    M = A.mats
    hU = _rect_sinkhorn(M[:, n - l:, :k]) if l > 0 else np.eye(k, dtype=complex)
    hP = _rect_sinkhorn(M[:, : n - l, k:])
    h = np.zeros((n, n), dtype=complex)
    h[:k, :k] = np.exp(t / 2) * hU
    h[k:, k:] = np.exp(-t / 2) * hP
    return PDPoint.from_factor(h)


@_timed
def suite_attainment_prescaled(shapes=None, t=20.0, slack=0.05, seed=0) -> SuiteResult:
    """Same family and bound as :func:`suite_attainment`, along the block-balanced ray."""
    res = SuiteResult("duality-prescaled")
    shapes = zero_block_shapes() if shapes is None else shapes
    per_shape = []
    for (n, k, l) in shapes:
        inst = zero_block(n, k, l, seed=seed)
        c = k - l
        _, rep = scaling_from_point(inst.tuple, prescaled_ray(inst.tuple, k, l, t))
        res.check("ray_residual", 0.0).add(max(2 * c - rep.sum, rep.sum - (2 * c + slack)))
        per_shape.append({"n": n, "k": k, "l": l, "corank": c, "residual": rep.sum})
    res.info["shapes"] = per_shape
    return res


@_timed
def suite_scalable(instances=20, n=3, m=3, tol=1e-4, max_iters=1000, seed=0) -> SuiteResult:
    """Sinkhorn on random certified full-rank tuples."""
    res = SuiteResult("scalable")
    cfg = FlowConfig(max_iters=max_iters, tolerance=tol, norm=L1)
    iters = []
    for i in range(instances):
        A = random_full(n, m, seed=seed + i).tuple
        cert = ncrank(A)
        res.check("certified_full_rank", 0).add(0 if cert.certified and cert.ncrank == n else 1)
        tr = run_sinkhorn(A, cfg)
        r = tr.final.residual_l1
        res.check("sinkhorn_residual_below_tol", 0).add(0.0 if r < tol else r)
        iters.append(len(tr) - 1)
    res.info["iterations"] = iters
    return res


@_timed
def suite_flow(max_iters=500, seed=0) -> SuiteResult:
    """Minimizing movement on E4: minimum slope and the recovered flag."""
    res = SuiteResult("flow")
    A = e4(seed).tuple
    tr = run_minimizing_movement(A, cfg=FlowConfig(max_iters=max_iters, tolerance=1e-9))
    smin = float(tr.column("slope").min())
    value, witness, certified = min_finfty_ball(A)
    # the slope cannot drop below 2 exactly; allow rounding noise at that end only
    res.check("min_slope_window", 0).add(max(2.0 - ROUNDING_SLACK - smin, smin - 2.1, 0.0))
    res.check("matches_min_finfty", 0).add(0 if certified and value == -2.0 else 1)
    H = tr.tail_direction()
    target = Subspace.coordinate(3, [0, 1])
    cands = round_direction(H) if H is not None else []
    angle = cands[0].max_angle(target) if cands else math.pi / 2
    res.check("top_gap_flag_angle", 1e-2).add(angle)
    res.info.update({"min_slope": smin, "stop_reason": tr.stop_reason,
                     "iterations": len(tr) - 1, "witness_dim": witness.dim,
                     "direction_eigs": None if H is None else
                     np.linalg.eigvalsh(H)[::-1].tolist()})
    return res


def random_cert_instance(i, seed=1000):
    """Mixed family for certification trials: Gaussian, rotated zero-block, low-rank."""
    rng = rng_from(seed + i)
    n, m = int(rng.integers(2, 5)), int(rng.integers(1, 4))
    kind = i % 3
    if kind == 0:
        A = complex_gaussian(rng, (m, n, n))
    elif kind == 1:
        k = int(rng.integers(1, n + 1))
        l = int(rng.integers(0, k))
        A = complex_gaussian(rng, (m, n, n))
        A[:, : n - l, :k] = 0
        A = random_unitary(rng, n) @ A @ random_unitary(rng, n)
    else:
        r = int(rng.integers(1, n))
        A = np.stack([complex_gaussian(rng, (n, r)) @ complex_gaussian(rng, (r, n))
                      for _ in range(m)])
    return MatrixTuple(A)


@_timed
def suite_certify(instances=100, seeds=(0, 1), rate=0.9, seed=1000) -> SuiteResult:
    """skew3, zero-block families and random tuples, cross-checked across blow-up seeds."""
    res = SuiteResult("certify")
    c = ncrank(skew3().tuple, seed=seeds[0])
    res.check("skew3", 0).add(0 if c.certified and c.ncrank == 3 else 1)
    res.check("skew3_blowup_d2", 0).add(0 if blowup_rank(skew3().tuple, 2, seed=seeds[0]) == 6
                                        else 1)
    for (n, k, l) in zero_block_shapes(coranks=range(1, 6)):
        inst = zero_block(n, k, l)
        c = ncrank(inst.tuple, seed=seeds[0])
        res.check("zero_block_construction", 0).add(
            0 if c.certified and c.ncrank == inst.known_ncrank else 1)
    ok = 0
    for i in range(instances):
        A = random_cert_instance(i, seed)
        c1 = ncrank(A, seed=seeds[0])
        c2 = ncrank(A, seed=seeds[1])
        ok += c1.certified
        wrong = c1.certified and not (c2.lower_bound <= c1.ncrank <= c2.upper_bound)
        wrong |= c2.certified and not (c1.lower_bound <= c2.ncrank <= c1.upper_bound)
        res.check("certified_but_wrong", 0).add(1 if wrong else 0)
        # soundness: witness and blow-up replay reproduce the stated bounds
        U = c1.upper_witness
        res.check("witness_replay", 0).add(
            abs(A.n - (U.dim - dim_AU(A, U)) - c1.upper_bound))
        b = c1.blowup
        r = blowup_rank(A, b["d"], seed=b["seed"]) if b["rank"] else 0
        res.check("blowup_replay", 0).add(abs(r - b["rank"]))
    res.check("certification_rate", 0).add(max(0.0, rate - ok / instances))
    res.info["certification_rate"] = ok / instances
    return res


@_timed
def suite_reduction(instances=50, seed=0) -> SuiteResult:
    """Zero-padded, rotated cores: reduced corank equals padding plus core corank."""
    res = SuiteResult("reduction")
    rng = rng_from(seed)
    done = 0
    while done < instances:
        n_core = int(rng.integers(1, 5))
        pad = int(rng.integers(1, 4))
        m = int(rng.integers(1, 4))
        if n_core >= 3 and rng.random() < 0.5:
            k = int(rng.integers(2, n_core))
            core = zero_block(n_core, k, k - 1, m=m, seed=int(rng.integers(1 << 30))).tuple
        else:
            core = MatrixTuple(complex_gaussian(rng, (m, n_core, n_core)))
        cc = ncrank(core)
        if not cc.certified or check_full_support(core) != (n_core, n_core):
            continue
        done += 1
        n = n_core + pad
        big = np.zeros((core.m, n, n), dtype=complex)
        big[:, :n_core, :n_core] = core.mats
        P, Q = random_unitary(rng, n), random_unitary(rng, n)
        A = MatrixTuple(P @ big @ Q)
        red = reduce_tuple(A)
        rc = ncrank(red.tuple) if red.tuple is not None else None
        got = red.offset + (rc.corank if rc is not None else 0)
        res.check("corank_identity", 0).add(abs(got - (pad + cc.corank)))
        res.check("reduced_size", 0).add(abs(red.n_reduced - n_core))
        res.check("reduced_certified", 0).add(0 if rc is None or rc.certified else 1)
    return res


SUITES = {
    "norms": suite_norms,
    "finsler": suite_finsler,
    "gradcheck": suite_gradcheck,
    "finfty": suite_finfty,
    "weak-duality": suite_weak_duality,
    "duality": suite_attainment,
    "duality-prescaled": suite_attainment_prescaled,
    "scalable": suite_scalable,
    "flow": suite_flow,
    "certify": suite_certify,
    "reduction": suite_reduction,
}


def run_suite(name, **kwargs) -> SuiteResult:
    return SUITES[name](**kwargs)


@_timed
def suite_instance(inst, t=20.0, slack=0.05, samples=100, seed=0) -> SuiteResult:
    """Checks on one instance: certificate replay, weak duality, and the ray residual.

    The ray uses the certificate's witness ``U`` (``exp(t (2 P_U - I))``) and is
    only run for positive corank and full left support.
    """
    res = SuiteResult(f"instance:{inst.name or 'unnamed'}")
    A = inst.tuple
    cert = ncrank(A, seed=seed)
    U = cert.upper_witness
    res.check("certified", 0).add(0 if cert.certified else 1)
    if inst.known_ncrank is not None:
        res.check("known_ncrank", 0).add(abs(cert.ncrank - inst.known_ncrank))
    res.check("witness_replay", 0).add(abs(A.n - (U.dim - dim_AU(A, U)) - cert.upper_bound))
    rng = rng_from(seed)
    bound = 2 * (U.dim - dim_AU(A, U))
    for _ in range(samples):
        spread = rng.uniform(0, 3)
        s = ScalingPair(random_gl(rng, A.n, spread), random_gl(rng, A.n, spread))
        res.check("weak_duality", 1e-8).add(bound - residual(A, s, L1).sum)
    c = cert.corank
    if c > 0 and check_full_support(A)[0] == A.n:
        X = PDPoint.from_log(t * (2 * U.projector() - np.eye(A.n)))
        _, rep = scaling_from_point(A, X)
        res.check("ray_residual", 0.0).add(max(2 * c - rep.sum, rep.sum - (2 * c + slack)))
        res.info["ray_residual"] = rep.sum
    res.info.update({"ncrank": cert.ncrank, "corank": cert.corank})
    return res
