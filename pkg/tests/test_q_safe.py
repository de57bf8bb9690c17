import numpy as np
import pytest

from safeproj.errors import InfeasibleSafeSet, NotConvex, SingularGram
from safeproj.q_safe import (
    QBasis,
    QuadraticQ,
    extract_projected_policy,
    extract_safe_policy,
    fit_q_lstdq,
    sample_safe_uniform,
)
from safeproj.safe_set import ConstraintSet

X0 = np.zeros(1)


@pytest.fixture
def gap_instance():
    return (QuadraticQ.from_matrices(np.diag([2.0, 20.0]), [-4.0, 0.0], 4.0),
            ConstraintSet.affine([[1.0, 1.0]], [0.0]))


def test_safe_extraction_hand_values(gap_instance):
    q, cset = gap_instance
    u = extract_safe_policy(q, cset, X0)
    np.testing.assert_allclose(u, [2 / 11, -2 / 11], atol=1e-12)
    assert abs(q.value(X0, u) - 440 / 121) <= 1e-12


def test_projected_extraction_hand_values(gap_instance):
    q, cset = gap_instance
    np.testing.assert_allclose(q.unconstrained_argmin(X0), [2.0, 0.0])
    u = extract_projected_policy(q, cset, X0)
    np.testing.assert_allclose(u, [1.0, -1.0], atol=1e-12)
    assert abs(q.value(X0, u) - 11.0) <= 1e-12


def test_extractions_agree_when_minimizer_is_safe():
    q = QuadraticQ.from_matrices(np.diag([2.0, 20.0]), [-4.0, 0.0], 4.0)
    loose = ConstraintSet.affine([[1.0, 1.0]], [5.0])
    np.testing.assert_allclose(extract_safe_policy(q, loose, X0), [2.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(extract_projected_policy(q, loose, X0), [2.0, 0.0], atol=1e-12)


def test_norm_cost_on_ball():
    q = QuadraticQ.from_matrices(2 * np.eye(2), [0.0, 0.0])
    np.testing.assert_allclose(extract_safe_policy(q, ConstraintSet.ball([0.5, 0.5], 1.0), X0), 0.0, atol=1e-12)


def test_isotropic_curvature_makes_extractions_equal(rng):
    for _ in range(50):
        q = QuadraticQ.from_matrices(np.eye(2) * rng.uniform(0.5, 3.0), rng.normal(size=2) * 3)
        cset = ConstraintSet.composite(ConstraintSet.ball([0, 0], 1.0), ConstraintSet.affine([rng.normal(size=2)], [0.2]))
        np.testing.assert_allclose(extract_safe_policy(q, cset, X0), extract_projected_policy(q, cset, X0), atol=1e-8)


def test_dominance_on_random_instances(rng):
    for _ in range(100):
        L = rng.normal(size=(2, 2))
        q = QuadraticQ.from_matrices(L @ L.T + 0.1 * np.eye(2), rng.normal(size=2) * 3, rng.normal())
        cset = ConstraintSet.affine(rng.normal(size=(2, 2)), rng.uniform(0.0, 1.0, size=2))
        assert q.value(X0, extract_safe_policy(q, cset, X0)) <= q.value(X0, extract_projected_policy(q, cset, X0)) + 1e-9


def test_nonconvex_q_rejected():
    q = QuadraticQ.from_matrices(np.diag([1.0, -1.0]), [0.0, 0.0])
    with pytest.raises(NotConvex):
        extract_safe_policy(q, ConstraintSet.ball([0, 0], 1), X0)


def test_empty_set_raises():
    q = QuadraticQ.from_matrices(np.eye(2), [0.0, 0.0])
    empty = ConstraintSet.affine([[1.0, 0.0], [-1.0, 0.0]], [-1.0, -1.0])
    with pytest.raises(InfeasibleSafeSet):
        extract_safe_policy(q, empty, X0)


def test_coefficients_roundtrip(rng):
    basis = QBasis(2, 2)
    q = QuadraticQ(basis, rng.normal(size=basis.n_features))
    x = rng.normal(size=2)
    Quu, qu, c = q.coefficients(x)
    for _ in range(5):
        u = rng.normal(size=2)
        expected = float(basis.features(x[None], u[None])[0] @ q.weights)
        assert abs(q.value(x, u) - expected) <= 1e-12
        assert abs(0.5 * u @ Quu @ u + qu @ u + c - expected) <= 1e-12


def test_lstdq_absorbing_state_constant_cost():
    # one state, one action: Q = c / (1 - gamma)
    basis = QBasis(1, 1, state_degree=0)
    n = 5
    x = np.zeros((n, 1))
    u = np.array([[0.0], [1.0], [-1.0], [2.0], [0.5]])
    q = fit_q_lstdq(x, u, np.full(n, 3.0), x, u, 0.9, basis)
    for ui in u:
        assert abs(q.value(x[0], ui) - 30.0) <= 1e-9


def test_lstdq_two_state_chain_matches_direct_solve():
    # states s in {0, 1} (x = s), fixed on-policy inputs u(s); deterministic swap
    basis = QBasis(1, 1, state_degree=1)
    gamma = 0.9
    xs = np.array([[0.0], [1.0], [0.0], [1.0], [0.0], [1.0]])
    us = np.array([[0.0], [1.0], [0.5], [1.5], [1.0], [2.0]])
    # three policies visit different inputs; each sample's successor input is u_next
    x_next = 1.0 - xs
    u_next = np.roll(us, -1, axis=0)
    cost = np.array([1.0, 0.0, 2.0, 1.0, 0.5, 3.0])
    q = fit_q_lstdq(xs, us, cost, x_next, u_next, gamma, basis)
    Phi = basis.features(xs, us)
    Phi_next = basis.features(x_next, u_next)
    A = Phi.T @ (Phi - gamma * Phi_next)
    w_direct = np.linalg.lstsq(A, Phi.T @ cost, rcond=None)[0]
    np.testing.assert_allclose(q.weights, w_direct, atol=1e-10)


def test_lstdq_recovers_representable_q(rng):
    basis = QBasis(2, 2)
    w_true = rng.normal(size=basis.n_features)
    n = 400
    x = rng.normal(size=(n, 2))
    u = rng.normal(size=(n, 2))
    x_next = rng.normal(size=(n, 2))
    u_next = rng.normal(size=(n, 2))
    gamma = 0.9
    cost = basis.features(x, u) @ w_true - gamma * basis.features(x_next, u_next) @ w_true
    q = fit_q_lstdq(x, u, cost, x_next, u_next, gamma, basis)
    np.testing.assert_allclose(q.weights, w_true, atol=1e-9)
    assert q.td_residual <= 1e-9


def test_lstdq_zero_cost_gives_zero_weights(rng):
    basis = QBasis(1, 1, state_degree=1)
    x, u = rng.normal(size=(20, 1)), rng.normal(size=(20, 1))
    q = fit_q_lstdq(x, u, np.zeros(20), x[::-1], u[::-1], 0.9, basis)
    np.testing.assert_array_equal(q.weights, 0.0)


def test_lstdq_needs_excitation():
    basis = QBasis(1, 1)
    with pytest.raises(SingularGram):
        fit_q_lstdq(np.zeros((3, 1)), np.zeros((3, 1)), np.ones(3), np.zeros((3, 1)), np.zeros((3, 1)), 0.9, basis)


def test_safe_uniform_sampler_stays_in_set(rng):
    cset = ConstraintSet.composite(ConstraintSet.ball([0, 0], 1.0), ConstraintSet.affine([[1.0, 1.0]], [0.0]))
    for _ in range(200):
        assert cset.is_member(None, sample_safe_uniform(cset, None, [-1, -1], [1, 1], rng))
