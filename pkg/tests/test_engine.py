import json
import math

import numpy as np
import pytest
import scipy.optimize

from conftest import unit
from ncscale.engine import (FlowConfig, _ProximalObjective, _vec_to_herm, run_gradient_descent,
                            run_minimizing_movement, run_sinkhorn, sinkhorn_step)
from ncscale.errors import InvalidInputError, NotFullSupportError, StallError
from ncscale.instances import e4, random_full
from ncscale.linalg import L1
from ncscale.manifold import PDPoint
from ncscale.operator import MatrixTuple, marginals, residual, scale_tuple
from ncscale.sampling import complex_gaussian, random_unitary


def test_config_validation():
    with pytest.raises(InvalidInputError):
        FlowConfig(max_iters=0)
    with pytest.raises(InvalidInputError):
        FlowConfig(tolerance=-1)
    with pytest.raises(InvalidInputError):
        FlowConfig(smoothing_p=1.5)
    assert FlowConfig(smoothing_p=math.inf).smoothing_p == math.inf


# ----------------------------------------------------------------- Sinkhorn


def test_sinkhorn_step_fixed_point():
    D = MatrixTuple([unit(2, 0, 0), unit(2, 1, 1)])
    s = sinkhorn_step(D)
    np.testing.assert_allclose(s.g, np.eye(2))
    np.testing.assert_allclose(s.h, np.eye(2))


def test_sinkhorn_unitary_tuple_normalises_in_one_step(rng):
    A = MatrixTuple([0.3 * random_unitary(rng, 3)])
    assert residual(A, sinkhorn_step(A)).sum == pytest.approx(0, abs=1e-12)


def test_sinkhorn_stall_carries_defect():
    with pytest.raises(StallError) as info:
        sinkhorn_step(MatrixTuple([unit(2, 0, 0)]))
    err = info.value
    assert err.side == "left"
    np.testing.assert_allclose(np.abs(err.defect), [[0], [1]])


def test_run_sinkhorn_requires_full_support():
    with pytest.raises(NotFullSupportError):
        run_sinkhorn(MatrixTuple([unit(2, 0, 0)]))


def test_run_sinkhorn_converged_at_zero():
    tr = run_sinkhorn(MatrixTuple([unit(2, 0, 0), unit(2, 1, 1)]))
    assert tr.stop_reason == "converged" and len(tr) == 1
    assert tr.final.residual_l1 == 0


def test_run_sinkhorn_random_full_rank():
    tr = run_sinkhorn(random_full(3, 3, seed=4).tuple, FlowConfig(max_iters=1000, tolerance=1e-4))
    assert tr.stop_reason == "converged"
    assert tr.final.residual_l1 < 1e-4


def test_sinkhorn_marginals_after_each_step(rng):
    A = MatrixTuple(complex_gaussian(rng, (2, 4, 4)))
    tr = run_sinkhorn(A, FlowConfig(max_iters=20, tolerance=0))
    for rec in tr.records[1:]:
        B = scale_tuple(A, rec.point)
        left, right = marginals(B)
        assert np.abs(right - np.eye(4)).max() <= 1e-10
        r = residual(A, rec.point, L1)
        assert r.left == pytest.approx(rec.residual_l1, abs=1e-10)


def test_sinkhorn_on_e4_respects_lower_bound():
    tr = run_sinkhorn(e4().tuple, FlowConfig(max_iters=300, tolerance=1e-6))
    assert min(r.residual_l1 for r in tr.records) >= 2 - 1e-8


# ------------------------------------------------------------ gradient flows


def test_gd_on_identity_tuple_is_flat():
    tr = run_gradient_descent(MatrixTuple([np.eye(2)]), np.diag([2.0, 0.5]))
    assert tr.stop_reason == "converged"
    assert np.all(tr.column("slope") <= 1e-12)


def test_gd_fixed_point():
    tr = run_gradient_descent(MatrixTuple([unit(2, 0, 0), unit(2, 1, 1)]))
    assert len(tr) == 1 and tr.final.slope == 0


def test_gd_needs_full_support():
    with pytest.raises(NotFullSupportError):
        run_gradient_descent(MatrixTuple([unit(2, 0, 0)]))


def test_gd_on_e4_reaches_slope_two():
    tr = run_gradient_descent(e4().tuple, cfg=FlowConfig(max_iters=500))
    smin = tr.column("slope").min()
    assert 2 - 1e-12 <= smin <= 2.1
    assert tr.stop_reason == "boundary"
    assert np.all(np.diff(tr.column("f_value")) <= 1e-12)
    assert np.all(tr.column("residual_l1") >= 2 - 1e-8)


def test_gd_converges_on_scalable_tuple():
    tr = run_gradient_descent(random_full(3, 3, seed=2).tuple, cfg=FlowConfig(max_iters=2000))
    assert tr.stop_reason == "converged"
    assert tr.final.residual_l1 <= 1e-6


def test_gd_energy_identity_diagnostic():
    # f(X_a) - f(X_b) against sum of squared d_2 slopes times step; coarse check
    tr = run_gradient_descent(e4().tuple, cfg=FlowConfig(max_iters=200, step_size=1e-2))
    f = tr.column("f_value")
    energy = 0.0
    for prev, rec in zip(tr.records[:-1], tr.records[1:]):
        R = np.linalg.eigvalsh(_whitened(prev))
        energy += rec.eta * np.sum(R ** 2)
    assert f[0] - f[-1] == pytest.approx(energy, rel=0.2)


def _whitened(rec):
    from ncscale.engine import _evaluate

    return _evaluate(e4().tuple, rec.point)[1]


def test_mm_identity_tuple_stays_put():
    X0 = PDPoint.from_matrix(np.diag([2.0, 0.5]))
    tr = run_minimizing_movement(MatrixTuple([np.eye(2)]), X0, FlowConfig(max_iters=5, tolerance=0))
    for rec in tr.records:
        np.testing.assert_allclose(rec.point.matrix, X0.matrix, atol=1e-9)


def test_mm_small_tau_barely_moves(rng):
    A = MatrixTuple(complex_gaussian(rng, (3, 3, 3)))
    for tau in (1e-2, 1e-3):
        tr = run_minimizing_movement(A, cfg=FlowConfig(max_iters=1, mm_tau=tau, tolerance=0))
        assert tr.records[1].dist <= 5 * tau * tr.records[0].slope


def test_mm_inner_gradient_matches_finite_differences(rng):
    A = MatrixTuple(complex_gaussian(rng, (3, 3, 3)))
    X = PDPoint.from_matrix(np.diag([2.0, 1.0, 0.3]))
    for p in (2.0, 4.0, 8.0):
        obj = _ProximalObjective(A, X, p, 0.3)
        x0 = rng.standard_normal(9) * 0.4
        err = scipy.optimize.check_grad(lambda x: obj(x)[0], lambda x: obj(x)[1], x0,
                                        epsilon=1e-7)
        assert err <= 1e-5 * max(1.0, np.linalg.norm(obj(x0)[1]))


def test_mm_objective_value_matches_definition(rng):
    from ncscale.manifold import finsler_dist
    from ncscale.linalg import LpNorm
    from ncscale.operator import capacity_f

    A = MatrixTuple(complex_gaussian(rng, (2, 3, 3)))
    X = PDPoint.from_matrix(np.diag([1.5, 1.0, 0.7]))
    x = rng.standard_normal(9) * 0.3
    S = _vec_to_herm(x, 3)
    Y = X.move(S, 1.0)
    expected = capacity_f(A, Y.matrix) + finsler_dist(X.matrix, Y.matrix, LpNorm(8)) ** 2 / 0.6
    assert _ProximalObjective(A, X, 8.0, 0.3)(x)[0] == pytest.approx(expected, abs=1e-10)


def test_mm_on_e4_direction_and_slope():
    tr = run_minimizing_movement(e4().tuple, cfg=FlowConfig(max_iters=500, tolerance=1e-9))
    s = tr.column("slope")
    assert 2 - 1e-12 <= s.min() <= 2.1
    # slope is nonincreasing along the flow up to jitter
    assert np.all(np.diff(s) <= 1e-3)
    H = tr.tail_direction()
    w, V = np.linalg.eigh(H)
    assert w[0] < 0 < w[1]
    top = V[:, 1:]
    assert np.abs(top[2]).max() <= 1e-2
    assert not any(r.downgraded for r in tr.records)


def test_trace_jsonl_fields():
    tr = run_gradient_descent(e4().tuple, cfg=FlowConfig(max_iters=3))
    lines = tr.to_jsonl().splitlines()
    assert len(lines) == len(tr)
    for line in lines:
        rec = json.loads(line)
        assert list(rec) == ["step", "f", "res_l1", "slope", "dist", "direction_eigs"]
    assert json.loads(lines[0])["direction_eigs"] is None
    eigs = json.loads(lines[-1])["direction_eigs"]
    assert eigs == sorted(eigs, reverse=True)


def test_runs_are_deterministic():
    a = run_minimizing_movement(e4().tuple, cfg=FlowConfig(max_iters=20)).to_jsonl()
    b = run_minimizing_movement(e4().tuple, cfg=FlowConfig(max_iters=20)).to_jsonl()
    assert a == b
