"""Safe Q-learning with a Q-function that is quadratic in the input.

Two ways to turn a fitted Q into a safe policy are provided: minimizing Q
over S(x) directly, and projecting the unconstrained minimizer onto S(x).
The first is never worse under the model Q; the second generally is.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .critic import ValueBasis, _require_rank, ridge_solve
from .errors import MaxIterations, NotConvex
from .projection import minimize_quadratic, project
from .safe_set import ConstraintSet

PD_TOL = 1e-9


@dataclass(frozen=True)
class QBasis:
    """Features kron([u_i u_j (i<=j), u_i, 1], state monomials)."""

    n_state: int
    n_input: int
    state_degree: int = 2

    @property
    def state_basis(self):
        return ValueBasis(self.n_state, self.state_degree)

    @property
    def input_pairs(self):
        return list(itertools.combinations_with_replacement(range(self.n_input), 2))

    @property
    def n_input_terms(self):
        return len(self.input_pairs) + self.n_input + 1

    @property
    def n_features(self):
        return self.n_input_terms * self.state_basis.n_features

    def input_terms(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        cols = [U[:, i] * U[:, j] for i, j in self.input_pairs]
        cols.extend(U.T)
        cols.append(np.ones(U.shape[0]))
        return np.column_stack(cols)

    def features(self, X, U):
        B = self.state_basis.features(X)
        T = self.input_terms(U)
        return (T[:, :, None] * B[:, None, :]).reshape(B.shape[0], -1)


@dataclass(frozen=True)
class QuadraticQ:
    basis: QBasis
    weights: np.ndarray
    td_residual: float = 0.0

    @classmethod
    def from_matrices(cls, Q_uu, q_u, offset=0.0, n_state=1):
        """State-independent Q(u) = 1/2 u'Q_uu u + q_u'u + offset."""
        Q_uu = np.atleast_2d(np.asarray(Q_uu, dtype=float))
        m = Q_uu.shape[0]
        basis = QBasis(n_state, m, state_degree=0)
        w = [Q_uu[i, j] * (0.5 if i == j else 1.0) for i, j in basis.input_pairs]
        w.extend(np.asarray(q_u, dtype=float).reshape(-1))
        w.append(float(offset))
        return cls(basis, np.array(w))

    def coefficients(self, x):
        """(Q_uu(x), q_u(x), offset(x)) of the quadratic in u at state x."""
        b = self.basis.state_basis.features(np.asarray(x, dtype=float).reshape(1, -1))[0]
        coef = self.weights.reshape(self.basis.n_input_terms, -1) @ b
        m = self.basis.n_input
        Q_uu = np.zeros((m, m))
        pairs = self.basis.input_pairs
        for c, (i, j) in zip(coef, pairs):
            if i == j:
                Q_uu[i, i] = 2.0 * c
            else:
                Q_uu[i, j] = Q_uu[j, i] = c
        q_u = coef[len(pairs):len(pairs) + m]
        return Q_uu, q_u, float(coef[-1])

    def value(self, x, u):
        Q_uu, q_u, c = self.coefficients(x)
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ Q_uu @ u + q_u @ u + c)

    def _convex_terms(self, x):
        Q_uu, q_u, _ = self.coefficients(x)
        if np.linalg.eigvalsh(Q_uu).min() < PD_TOL:
            raise NotConvex("Q is not strictly convex in u at this state")
        return Q_uu, q_u

    def unconstrained_argmin(self, x):
        Q_uu, q_u = self._convex_terms(x)
        return -np.linalg.solve(Q_uu, q_u)


def extract_safe_policy(q: QuadraticQ, cset: ConstraintSet, x):
    """argmin_u Q(x, u) subject to s(x, u) <= 0."""
    Q_uu, q_u = q._convex_terms(x)
    u, *_ = minimize_quadratic(cset, x, Q_uu, q_u)
    return u


def extract_projected_policy(q: QuadraticQ, cset: ConstraintSet, x):
    """Unconstrained argmin of Q followed by the Euclidean projection."""
    return project(cset, x, q.unconstrained_argmin(x)).u_proj


def fit_q_lstdq(x, u, cost, x_next, u_next, gamma, basis: QBasis, ridge=1e-8) -> QuadraticQ:
    """On-policy (SARSA-style) LSTDQ over the quadratic-in-u basis."""
    Phi = basis.features(x, u)
    Phi_next = basis.features(x_next, u_next)
    _require_rank(Phi, basis.n_features, "fit_q_lstdq")
    A = Phi.T @ (Phi - gamma * Phi_next)
    b = Phi.T @ np.asarray(cost, dtype=float)
    w = ridge_solve(A, b, ridge)
    return QuadraticQ(basis, w, float(np.abs(A @ w - b).max()))


def sample_safe_uniform(cset: ConstraintSet, x, low, high, rng: np.random.Generator, max_tries=100_000):
    """Uniform draw from S(x) intersected with the box [low, high], by rejection."""
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    for _ in range(max_tries):
        u = rng.uniform(low, high)
        if cset.is_member(x, u):
            return u
    raise MaxIterations("rejection sampler found no safe input")
