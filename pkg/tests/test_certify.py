import itertools
import math

import numpy as np
import pytest

from conftest import unit
from ncscale.certify import (Subspace, _flow_candidates, blowup_rank, corank_via_reduction,
                             dim_AU, exhaustive_coordinate_corank, finfty_formula,
                             finfty_numeric, min_finfty_ball, ncrank, reduce_tuple,
                             round_direction, shrinkage, witness_direction)
from ncscale.engine import FlowConfig, run_minimizing_movement
from ncscale.errors import InvalidInputError, NotFullSupportError
from ncscale.instances import e4, random_full, skew3, zero_block
from ncscale.linalg import LINF
from ncscale.manifold import cotangent_dual_norm
from ncscale.operator import MatrixTuple, check_full_support, grad_f
from ncscale.sampling import complex_gaussian, random_hermitian, random_unitary

E12 = Subspace.coordinate(3, [0, 1])


def test_dim_AU_examples(explicit_e4):
    assert dim_AU(MatrixTuple([np.eye(3)]), E12) == 2
    assert dim_AU(MatrixTuple([unit(2, 0, 0)]), Subspace.coordinate(2, [1])) == 0
    assert dim_AU(explicit_e4, E12) == 1
    assert dim_AU(e4().tuple, E12) == 1


def test_dim_AU_ignores_rounding_noise(rng):
    A = zero_block(4, 2, 0).tuple
    P, Q = random_unitary(rng, 4), random_unitary(rng, 4)
    B = MatrixTuple(P @ A.mats @ Q)
    assert dim_AU(B, Subspace(Q.conj().T[:, :2])) == 0


def test_finfty_formula_examples(explicit_e4):
    H = np.diag([1.0, 1.0, -1.0])
    assert finfty_formula(MatrixTuple([np.eye(3)]), random_hermitian(np.random.default_rng(1), 3)) \
        == pytest.approx(0, abs=1e-12)
    assert finfty_formula(explicit_e4, H) == -2
    assert finfty_formula(e4().tuple, H) == -2
    D = MatrixTuple([unit(2, 0, 0), unit(2, 1, 1)])
    assert finfty_formula(D, np.diag([1.0, -1.0])) == 0


def test_finfty_formula_term_by_term(rng):
    # independent evaluation: group distinct eigenvalues by hand
    A = zero_block(4, 3, 1).tuple
    H = np.diag([2.0, 2.0, 0.5, -1.0])
    lam = [2.0, 2.0, 0.5, -1.0, 0.0]
    dims = [dim_AU(A, Subspace.coordinate(4, range(i))) for i in range(1, 5)]
    expected = sum((lam[i] - lam[i + 1]) * (dims[i] - (i + 1)) for i in range(4))
    assert finfty_formula(A, H) == pytest.approx(expected)


def test_finfty_formula_ties_are_basis_free(rng):
    A = zero_block(4, 3, 1).tuple
    w = np.eye(4, dtype=complex)
    w[:2, :2] = random_unitary(rng, 2)
    H = np.diag([1.0, 1.0, 0.0, -1.0])
    assert finfty_formula(A, w @ H @ w.conj().T) == pytest.approx(finfty_formula(A, H))


def test_finfty_needs_full_support():
    with pytest.raises(NotFullSupportError):
        finfty_formula(MatrixTuple([unit(2, 0, 0)]), np.eye(2))


def test_finfty_numeric(explicit_e4):
    H = np.diag([1.0, 1.0, -1.0])
    assert finfty_numeric(MatrixTuple([np.eye(3)]), H, 50.0) == pytest.approx(0, abs=1e-12)
    assert finfty_numeric(e4().tuple, H, 1000.0) == pytest.approx(-2, abs=5e-2)
    # exact: f(exp(tH)) = -2t + log 20 on the integer instance
    assert finfty_numeric(explicit_e4, H, 20.0) == pytest.approx(-2, abs=1e-12)


def test_finfty_numeric_monotone(rng):
    for _ in range(30):
        n = int(rng.integers(2, 5))
        A = MatrixTuple(complex_gaussian(rng, (2, n, n)))
        H = random_hermitian(rng, n)
        assert finfty_numeric(A, H, 10) <= finfty_numeric(A, H, 100) + 1e-10


def test_positive_homogeneity(rng):
    A = zero_block(4, 3, 1).tuple
    H = random_hermitian(rng, 4)
    for a in (0.0, 0.3, 2.0, 17.0):
        assert finfty_formula(A, a * H) == pytest.approx(a * finfty_formula(A, H), abs=1e-9)


def test_round_direction_examples():
    c = round_direction(np.diag([1.0, 1.0, -1.0]))
    assert len(c) == 1 and c[0].max_angle(E12) < 1e-12
    c = round_direction(np.diag([3.0, 2.0, 1.0]))
    assert [u.dim for u in c] == [1, 2]
    assert round_direction(np.eye(3)) == []
    assert round_direction(np.zeros((3, 3))) == []


def test_round_direction_orders_by_gap():
    c = round_direction(np.diag([3.0, 2.5, -1.0]))
    assert [u.dim for u in c] == [2, 1]


def test_blowup_rank_examples():
    assert blowup_rank(MatrixTuple([np.eye(3)]), 2) == 6
    assert blowup_rank(MatrixTuple([unit(2, 0, 0)]), 1) == 1
    assert blowup_rank(skew3().tuple, 2) == 6
    assert blowup_rank(skew3().tuple, 1) == 2  # commutative rank


def test_blowup_is_deterministic():
    A = random_full(3, 2, seed=3).tuple
    assert blowup_rank(A, 2, trials=3, seed=9) == blowup_rank(A, 2, trials=3, seed=9)


def test_ncrank_examples():
    c = ncrank(MatrixTuple([unit(2, 0, 0)]))
    assert (c.ncrank, c.certified) == (1, True)
    assert c.upper_witness.max_angle(Subspace.coordinate(2, [1])) < 1e-12
    c = ncrank(skew3().tuple)
    assert (c.ncrank, c.certified, c.corank) == (3, True, 0)
    c = ncrank(e4().tuple)
    assert (c.ncrank, c.certified, c.corank) == (2, True, 1)
    assert c.upper_witness.max_angle(E12) < 1e-12


def test_certificate_json_fields():
    d = ncrank(e4().tuple).to_json()
    for key in ("ncrank", "certified", "upper_witness_basis", "blowup", "corank"):
        assert key in d
    assert set(d["blowup"]) == {"d", "seed", "rank"}
    W = np.array(d["upper_witness_basis"])
    assert W.shape == (3, 2, 2)


def test_certificate_soundness(rng):
    for _ in range(15):
        n = int(rng.integers(2, 5))
        A = complex_gaussian(rng, (2, n, n))
        k = int(rng.integers(1, n))
        A[:, : n - k + 1, :k] = 0
        A = MatrixTuple(random_unitary(rng, n) @ A @ random_unitary(rng, n))
        c = ncrank(A, seed=5)
        U = c.upper_witness
        assert n - shrinkage(A, U) == c.upper_bound
        b = c.blowup
        assert blowup_rank(A, b["d"], seed=b["seed"]) == b["rank"]
        assert -(-b["rank"] // b["d"]) == c.lower_bound


def test_rotated_subspace_found_by_flow(rng):
    A = e4().tuple
    Q = random_unitary(rng, 3)
    B = MatrixTuple(random_unitary(rng, 3) @ A.mats @ Q)
    cands = _flow_candidates(B, FlowConfig(max_iters=500))
    target = Subspace(Q.conj().T[:, :2])
    assert min(U.max_angle(target) for U in cands) < 1e-6


def test_reduce_tuple_examples():
    red = reduce_tuple(MatrixTuple([unit(2, 0, 0)]))
    np.testing.assert_allclose(np.abs(red.tuple.mats), [[[1]]])
    assert red.offset == 1
    with pytest.raises(InvalidInputError):
        reduce_tuple(MatrixTuple([np.eye(2)]))


def test_reduce_block_diagonal_is_exact():
    core = random_full(2, 2, seed=1).tuple
    big = np.zeros((2, 3, 3), dtype=complex)
    big[:, :2, :2] = core.mats
    red = reduce_tuple(MatrixTuple(big))
    assert red.offset == 1 and red.n_reduced == 2
    g, h = red.pair.g, red.pair.h
    C = g.conj().T @ big @ h
    np.testing.assert_allclose(C[:, 2, :], 0, atol=1e-12)
    np.testing.assert_allclose(C[:, :, 2], 0, atol=1e-12)
    # same tuple up to unitary equivalence: identical singular values
    np.testing.assert_allclose(np.linalg.svd(red.tuple.hstack(), compute_uv=False),
                               np.linalg.svd(core.hstack(), compute_uv=False), atol=1e-12)


def test_reduce_one_sided_matches_exhaustive():
    A = MatrixTuple([unit(2, 0, 0), unit(2, 0, 1)])
    assert check_full_support(A) == (1, 2)
    corank, certified = corank_via_reduction(A)
    assert certified
    assert corank == exhaustive_coordinate_corank(A)[0] == 1


@pytest.mark.parametrize("shape", [(3, 2, 0), (4, 3, 0), (4, 2, 0), (5, 2, 0)])
def test_reduction_identity_on_structured(shape):
    inst = zero_block(*shape)
    exhaustive, _ = exhaustive_coordinate_corank(inst.tuple)
    corank, certified = corank_via_reduction(inst.tuple)
    assert certified and corank == exhaustive == inst.known_corank


def test_min_finfty_ball_examples():
    v, U, ok = min_finfty_ball(MatrixTuple([unit(2, 0, 0), unit(2, 1, 1)]))
    assert (v, ok) == (0, True)
    v, U, ok = min_finfty_ball(e4().tuple)
    assert (v, ok) == (-2, True) and U.max_angle(E12) < 1e-12
    assert min_finfty_ball(MatrixTuple([np.eye(3)]))[0] == 0


def test_min_finfty_is_below_formula_on_the_ball(rng):
    A = zero_block(4, 3, 1).tuple
    value, U, ok = min_finfty_ball(A)
    assert ok and value == 2 * (dim_AU(A, U) - U.dim)
    assert finfty_formula(A, witness_direction(U)) == pytest.approx(value)
    for _ in range(200):
        H = random_hermitian(rng, 4)
        H /= np.abs(np.linalg.eigvalsh(H)).max()
        assert value <= finfty_formula(A, H) + 1e-9


def test_flow_slopes_respect_min_finfty():
    A = e4().tuple
    value = min_finfty_ball(A)[0]
    tr = run_minimizing_movement(A, cfg=FlowConfig(max_iters=60))
    for rec in tr.records[::5]:
        X = rec.point.matrix
        if rec.point.log_condition() < 25:
            assert cotangent_dual_norm(X, grad_f(A, X).form, LINF) >= -value - 1e-6


def test_exhaustive_oracle_by_brute_force():
    A = zero_block(3, 2, 1).tuple
    best = max(shrinkage(A, Subspace.coordinate(3, idx))
               for k in range(4) for idx in itertools.combinations(range(3), k))
    assert exhaustive_coordinate_corank(A)[0] == best == 1


def test_subspace_validation():
    with pytest.raises(InvalidInputError):
        Subspace(np.array([[1.0], [1.0]]))
    assert Subspace.coordinate(3, [0]).complement().dim == 2
    assert Subspace.coordinate(2, [0]).max_angle(Subspace.coordinate(2, [1])) == \
        pytest.approx(math.pi / 2)
