import numpy as np
import pytest

from conftest import unit
from ncscale.errors import InvalidInputError, InvalidScalingError, NotFullSupportError
from ncscale.linalg import L1, L2, LINF
from ncscale.manifold import PDPoint, cotangent_dual_norm, geodesic
from ncscale.operator import (MatrixTuple, ScalingPair, apply_T, apply_Tstar, capacity_f,
                              check_full_support, grad_f, residual, scale_tuple,
                              scaling_from_point)
from ncscale.sampling import complex_gaussian, random_gl, random_hermitian, random_pd

# three 2x2 matrices and a PD point, with capacity and differential from a
# 40-digit evaluation of the defining formulas
FROZEN_A = MatrixTuple([[[1, 2], [0, 1]], [[0, 1j], [1, 0]], [[1, 0], [1j, -1]]])
FROZEN_X = np.array([[2.0, 1.0], [1.0, 3.0]])
FROZEN_F = 3.6532522764707851773
FROZEN_DF = np.array([
    [-0.26839378238341968912, 0.30880829015544041451 + 0.088082901554404145078j],
    [0.30880829015544041451 - 0.088082901554404145078j, -0.026943005181347150259],
])


def test_tuple_validation():
    with pytest.raises(InvalidInputError):
        MatrixTuple([np.eye(2), np.eye(3)])
    with pytest.raises(InvalidInputError):
        MatrixTuple([[[np.inf]]])
    A = MatrixTuple([np.eye(2)])
    assert (A.n, A.m) == (2, 1)
    assert A == MatrixTuple([np.eye(2)])


def test_apply_T_examples(rng):
    X = random_hermitian(rng, 3)
    np.testing.assert_allclose(apply_T(MatrixTuple([np.eye(3)]), X), X)
    Y = np.array([[2, 1 + 1j], [1 - 1j, 5]])
    np.testing.assert_allclose(apply_T(MatrixTuple([unit(2, 0, 0)]), Y), 2 * unit(2, 0, 0))
    np.testing.assert_allclose(apply_Tstar(MatrixTuple([unit(2, 0, 1)]), np.eye(2)),
                               unit(2, 1, 1))


def test_apply_T_preserves_psd(rng):
    for n in range(1, 6):
        A = MatrixTuple(complex_gaussian(rng, (3, n, n)))
        G = complex_gaussian(rng, (n, 2))
        out = apply_T(A, G @ G.conj().T)
        assert np.linalg.eigvalsh(out).min() >= -1e-10


def test_adjointness(rng):
    for _ in range(20):
        n = int(rng.integers(1, 6))
        A = MatrixTuple(complex_gaussian(rng, (int(rng.integers(1, 4)), n, n)))
        X, Y = random_hermitian(rng, n), random_hermitian(rng, n)
        lhs = np.trace(apply_T(A, X) @ Y)
        rhs = np.trace(X @ apply_Tstar(A, Y))
        assert abs(lhs - rhs) <= 1e-10


def test_scale_tuple(rng):
    A = MatrixTuple(complex_gaussian(rng, (2, 3, 3)))
    assert scale_tuple(A, ScalingPair.identity(3)) == A
    g, h = random_gl(rng, 3), random_gl(rng, 3)
    np.testing.assert_allclose(scale_tuple(MatrixTuple([np.eye(3)]), ScalingPair(g, h)).mats[0],
                               g.conj().T @ h)
    g2, h2 = random_gl(rng, 3), random_gl(rng, 3)
    twice = scale_tuple(scale_tuple(A, ScalingPair(g, h)), ScalingPair(g2, h2))
    once = scale_tuple(A, ScalingPair(g @ g2, h @ h2))
    np.testing.assert_allclose(twice.mats, once.mats, atol=1e-10)


def test_singular_scaling_rejected():
    with pytest.raises(InvalidScalingError):
        ScalingPair(np.diag([1.0, 1e-14]), np.eye(2))


def test_residual_examples():
    r = residual(MatrixTuple([np.eye(2)]))
    assert (r.left, r.right) == (0, 0)
    r = residual(MatrixTuple([unit(2, 0, 0)]), v=L1)
    assert (r.left, r.right, r.sum) == (1, 1, 2)
    assert residual(MatrixTuple([unit(2, 0, 0), unit(2, 1, 1)])).sum == 0


def test_capacity_frozen_value():
    assert capacity_f(FROZEN_A, FROZEN_X) == pytest.approx(FROZEN_F, abs=1e-13)
    np.testing.assert_allclose(grad_f(FROZEN_A, FROZEN_X).form, FROZEN_DF, atol=1e-13)


def test_capacity_examples(rng):
    X = random_pd(rng, 3)
    assert capacity_f(MatrixTuple([np.eye(3)]), X) == pytest.approx(0, abs=1e-12)
    D = MatrixTuple([unit(2, 0, 0), unit(2, 1, 1)])
    Y = random_pd(rng, 2)
    expected = np.log(Y[0, 0].real * Y[1, 1].real) - np.log(np.linalg.det(Y).real)
    assert capacity_f(D, Y) == pytest.approx(expected, abs=1e-12)
    assert expected >= 0
    assert capacity_f(D, np.diag([2.0, 5.0])) == pytest.approx(0, abs=1e-14)


def test_capacity_scale_invariance(rng):
    for n in range(1, 5):
        A = MatrixTuple(complex_gaussian(rng, (2, n, n)))
        X = random_pd(rng, n)
        assert capacity_f(A, 7.3 * X) == pytest.approx(capacity_f(A, X), abs=1e-10)


def test_capacity_needs_full_support():
    with pytest.raises(NotFullSupportError):
        capacity_f(MatrixTuple([unit(2, 0, 0)]), np.eye(2))


def test_capacity_in_log_form_matches_dense(rng):
    A = MatrixTuple(complex_gaussian(rng, (3, 3, 3)))
    X = random_pd(rng, 3, spread=2)
    assert capacity_f(A, PDPoint.from_matrix(X)) == pytest.approx(capacity_f(A, X), abs=1e-11)


def test_grad_examples(rng):
    np.testing.assert_allclose(grad_f(MatrixTuple([np.eye(2)]), random_pd(rng, 2)).form, 0,
                               atol=1e-12)
    D = MatrixTuple([unit(2, 0, 0), unit(2, 1, 1)])
    np.testing.assert_allclose(grad_f(D, np.eye(2)).form, 0, atol=1e-15)


def test_grad_central_differences(rng):
    eps = 1e-5
    for _ in range(20):
        n, m = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        A = MatrixTuple(complex_gaussian(rng, (m, n, n)))
        X, H = random_pd(rng, n), random_hermitian(rng, n)
        fd = (capacity_f(A, X + eps * H) - capacity_f(A, X - eps * H)) / (2 * eps)
        an = grad_f(A, X)(H)
        assert abs(fd - an) <= 1e-5 * abs(an)


def test_scaling_from_point_examples(rng):
    h = random_gl(rng, 3)
    X = h @ h.conj().T
    pair, rep = scaling_from_point(MatrixTuple([np.eye(3)]), X)
    assert rep.right == pytest.approx(0, abs=1e-10)
    D = MatrixTuple([unit(2, 0, 0), unit(2, 1, 1)])
    pair, rep = scaling_from_point(D, np.eye(2))
    np.testing.assert_allclose(pair.g, np.eye(2), atol=1e-14)
    np.testing.assert_allclose(pair.h, np.eye(2), atol=1e-14)
    assert rep.sum == pytest.approx(0, abs=1e-14)


def test_scaling_from_point_pair_is_the_stated_one(rng):
    A = MatrixTuple(complex_gaussian(rng, (2, 3, 3)))
    X = random_pd(rng, 3)
    pair, rep = scaling_from_point(A, X)
    w, V = np.linalg.eigh(apply_T(A, X))
    np.testing.assert_allclose(pair.g, (V / np.sqrt(w)) @ V.conj().T, atol=1e-10)
    # the report agrees with a dense recomputation from the pair
    dense = residual(A, pair, L1)
    assert dense.left == pytest.approx(0, abs=1e-9)
    assert dense.right == pytest.approx(rep.right, abs=1e-9)


def test_slope_identity(rng):
    for _ in range(20):
        n = int(rng.integers(2, 5))
        A = MatrixTuple(complex_gaussian(rng, (3, n, n)))
        X = random_pd(rng, n)
        _, rep = scaling_from_point(A, X)
        assert rep.left <= 1e-9
        assert rep.right == pytest.approx(cotangent_dual_norm(X, grad_f(A, X).form, LINF),
                                          abs=1e-8)


def test_ray_residual_frozen(explicit_e4):
    # residual of the scaling at exp(20 diag(1,1,-1)) and the capacity there,
    # from a 60-digit evaluation: exactly 2 and -2 t + log 20
    X = PDPoint.from_log(20 * np.diag([1.0, 1.0, -1.0]))
    _, rep = scaling_from_point(explicit_e4, X)
    assert rep.sum == pytest.approx(2.0, abs=1e-9)
    assert 2 <= rep.sum + 1e-12 <= 2.05
    assert capacity_f(explicit_e4, X) == pytest.approx(-37.00426772644600900656, abs=1e-9)


def test_check_full_support(explicit_e4):
    assert check_full_support(MatrixTuple([np.eye(4)])) == (4, 4)
    assert check_full_support(MatrixTuple([unit(2, 0, 0)])) == (1, 1)
    assert check_full_support(explicit_e4) == (3, 3)


def test_geodesic_convexity(rng):
    for _ in range(200):
        n = int(rng.integers(1, 5))
        A = MatrixTuple(complex_gaussian(rng, (int(rng.integers(1, 4)), n, n)))
        X, Y = random_pd(rng, n), random_pd(rng, n)
        t = rng.uniform(0, 1)
        w, V = np.linalg.eigh(X)
        s, si = (V * np.sqrt(w)) @ V.conj().T, (V / np.sqrt(w)) @ V.conj().T
        wl, Vl = np.linalg.eigh(si @ Y @ si)
        H = s @ ((Vl * np.log(wl)) @ Vl.conj().T) @ s
        Z = geodesic(X, H, t)
        assert capacity_f(A, Z) <= (1 - t) * capacity_f(A, X) + t * capacity_f(A, Y) + 1e-8


def test_residual_is_unitary_invariant_in_g(rng):
    from ncscale.sampling import random_unitary

    A = MatrixTuple(complex_gaussian(rng, (2, 3, 3)))
    pair, rep = scaling_from_point(A, random_pd(rng, 3))
    u = random_unitary(rng, 3)
    other = residual(A, ScalingPair(pair.g @ u, pair.h), L1)
    assert other.sum == pytest.approx(rep.sum, abs=1e-9)
    assert residual(A, pair, L2).norm == L2
