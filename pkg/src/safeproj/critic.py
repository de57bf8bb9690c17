"""LSTD critics: a polynomial value function and a compatible advantage.

The advantage model is A_w(x, u_s) = w' psi(x, u_s) with psi the policy score
at the *unprojected* sample, so that the stochastic projected-policy gradient
E[psi A] can be formed from the fitted w.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import SingularGram
from .policy import GaussianPolicy

RIDGE = 1e-8


@dataclass(frozen=True)
class ValueBasis:
    """Monomials of the state up to ``degree``: [1, x_i, x_i x_j (i <= j)]."""

    n_state: int
    degree: int = 2

    def __post_init__(self):
        if self.degree not in (0, 1, 2):
            raise ValueError("value basis degree must be 0, 1 or 2")

    @property
    def pairs(self):
        return list(itertools.combinations_with_replacement(range(self.n_state), 2))

    @property
    def n_features(self):
        n = 1
        if self.degree >= 1:
            n += self.n_state
        if self.degree >= 2:
            n += len(self.pairs)
        return n

    def features(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cols = [np.ones(X.shape[0])]
        if self.degree >= 1:
            cols.extend(X.T)
        if self.degree >= 2:
            cols.extend(X[:, i] * X[:, j] for i, j in self.pairs)
        return np.column_stack(cols)


def ridge_solve(A, b, ridge=RIDGE, refinements=3):
    """Solve A w = b through (A + ridge I), refined by iterated Tikhonov steps.

    The refinement removes the ridge bias on well-excited directions while
    keeping directions outside range(A) at zero.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    lu = sla.lu_factor(A + ridge * np.eye(A.shape[0]))
    w = sla.lu_solve(lu, b)
    for _ in range(refinements):
        w = w + sla.lu_solve(lu, b - A @ w)
    return w


def ridge_lstsq(Phi, y, ridge=RIDGE, refinements=3, rank_tol=1e-10):
    """Ridge least squares restricted to the numerically identifiable subspace.

    Directions with singular value below rank_tol * s_max are dropped instead
    of regularized, so round-off in them cannot be amplified by 1/ridge. The
    kept directions get the iterated-Tikhonov filter 1 - (r / (s^2 + r))^k.
    """
    U, sv, Vt = np.linalg.svd(np.atleast_2d(Phi), full_matrices=False)
    keep = sv > rank_tol * (sv[0] if sv.size else 0.0)
    U, sv, Vt = U[:, keep], sv[keep], Vt[keep]
    s2 = sv ** 2
    filt = 1.0 - (ridge / (s2 + ridge)) ** (refinements + 1)
    return Vt.T @ (filt / sv * (U.T @ np.asarray(y, dtype=float)))


def _require_rank(Phi, needed, what):
    rank = np.linalg.matrix_rank(Phi) if Phi.size else 0
    if rank < needed:
        raise SingularGram(f"{what}: feature matrix rank {rank} < {needed}")


@dataclass(frozen=True)
class ValueFunction:
    basis: ValueBasis
    weights: np.ndarray
    td_residual: float = 0.0

    def __call__(self, X):
        return self.basis.features(X) @ self.weights

    @property
    def constant(self):
        return float(self.weights[0])

    @property
    def linear(self):
        n = self.basis.n_state
        return self.weights[1:1 + n] if self.basis.degree >= 1 else np.zeros(n)

    @property
    def quadratic(self):
        """Symmetric P with V(x) = c + p'x + x'Px."""
        n = self.basis.n_state
        P = np.zeros((n, n))
        if self.basis.degree >= 2:
            for w, (i, j) in zip(self.weights[1 + n:], self.basis.pairs):
                if i == j:
                    P[i, i] = w
                else:
                    P[i, j] = P[j, i] = 0.5 * w
        return P


@dataclass(frozen=True)
class CriticWeights:
    value: ValueFunction
    advantage_weights: np.ndarray
    gram_residual: float = 0.0


def lstd_v(x, cost, x_next, gamma, basis: Optional[ValueBasis] = None, ridge=RIDGE) -> ValueFunction:
    """LSTD(0) value weights from transitions (x, L, x+)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x_next = np.atleast_2d(np.asarray(x_next, dtype=float))
    cost = np.asarray(cost, dtype=float).reshape(-1)
    basis = basis or ValueBasis(x.shape[1])
    Phi = basis.features(x)
    Phi_next = basis.features(x_next)
    _require_rank(Phi, basis.n_features, "lstd_v")
    A = Phi.T @ (Phi - gamma * Phi_next)
    b = Phi.T @ cost
    w = ridge_solve(A, b, ridge)
    return ValueFunction(basis, w, float(np.abs(A @ w - b).max()))


def td_errors(value: ValueFunction, x, cost, x_next, gamma):
    return np.asarray(cost, dtype=float) + gamma * value(x_next) - value(x)


def lstd_compatible_advantage(x, u_s, cost, x_next, value: ValueFunction, policy: GaussianPolicy,
                              gamma, ridge=RIDGE) -> CriticWeights:
    """Regress TD errors onto the score features psi(x, u_s).

    Excitation is measured against the span the score can reach at the batch
    states; parameterizations with redundant directions (such as u_hat_ref and
    x_hat_ref entering through u_hat_ref + K x_hat_ref) are handled by
    returning the minimum-norm weights, see ``ridge_lstsq``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u_s = np.atleast_2d(np.asarray(u_s, dtype=float))
    delta = td_errors(value, x, cost, x_next, gamma)
    Psi = policy.score_batch(x, u_s)
    reachable = np.hstack([policy.mean_map.grad_theta(xi) for xi in x])
    _require_rank(Psi, np.linalg.matrix_rank(reachable), "compatible advantage")
    w = ridge_lstsq(Psi, delta, ridge)
    G = Psi.T @ Psi
    rhs = Psi.T @ delta
    return CriticWeights(value, w, float(np.abs(G @ w - rhs).max()))


def advantage_estimate(weights: CriticWeights, policy: GaussianPolicy, x, u_s):
    return float(weights.advantage_weights @ policy.score(x, u_s))
