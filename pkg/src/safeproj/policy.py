"""Affine/Gaussian policies and the projected policy-gradient estimators.

Parameter vector layout: theta = [u_hat_ref (m), x_hat_ref (n), K row-major (m*n)],
with mean map  pi(x) = u_hat_ref - K (x - x_hat_ref).

Jacobians follow the gradient convention used throughout the package:
``grad_theta(x)`` is (n_theta x m), i.e. the transpose of d pi / d theta.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyBatch, NonFiniteGradient
from .projection import ProjectionOutcome


@dataclass(frozen=True)
class AffinePolicy:
    u_hat_ref: np.ndarray
    x_hat_ref: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u_hat_ref", np.asarray(self.u_hat_ref, dtype=float).reshape(-1))
        object.__setattr__(self, "x_hat_ref", np.asarray(self.x_hat_ref, dtype=float).reshape(-1))
        K = np.asarray(self.K, dtype=float).reshape(self.u_hat_ref.size, self.x_hat_ref.size)
        object.__setattr__(self, "K", K)

    @property
    def m(self):
        return self.u_hat_ref.size

    @property
    def n(self):
        return self.x_hat_ref.size

    @property
    def n_params(self):
        return self.m + self.n + self.m * self.n

    @property
    def theta(self):
        return np.concatenate([self.u_hat_ref, self.x_hat_ref, self.K.ravel()])

    def with_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        m, n = self.m, self.n
        return AffinePolicy(theta[:m], theta[m:m + n], theta[m + n:].reshape(m, n))

    def mean(self, x):
        return self.u_hat_ref - self.K @ (np.asarray(x, dtype=float) - self.x_hat_ref)

    def grad_theta(self, x):
        m, n = self.m, self.n
        dx = np.asarray(x, dtype=float) - self.x_hat_ref
        D = np.zeros((self.n_params, m))
        D[:m] = np.eye(m)
        D[m:m + n] = self.K.T
        for i in range(m):
            D[m + n + i * n:m + n + (i + 1) * n, i] = -dx
        return D

    def grad_x(self, x):
        """(n x m) gradient of the mean w.r.t. the state."""
        return -self.K.T


@dataclass(frozen=True)
class GaussianPolicy:
    """u_s ~ Normal(mean(x), sigma^2 I) with sigma the standard deviation."""

    mean_map: AffinePolicy
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def theta(self):
        return self.mean_map.theta

    @property
    def n_params(self):
        return self.mean_map.n_params

    def with_theta(self, theta):
        return GaussianPolicy(self.mean_map.with_theta(theta), self.sigma)

    def mean(self, x):
        return self.mean_map.mean(x)

    def log_density(self, x, u_s):
        r = np.asarray(u_s, dtype=float) - self.mean(x)
        m = r.size
        return float(-0.5 * r @ r / self.sigma ** 2 - m * np.log(self.sigma) - 0.5 * m * np.log(2 * np.pi))

    def score(self, x, u_s):
        r = np.asarray(u_s, dtype=float) - self.mean(x)
        return self.mean_map.grad_theta(x) @ r / self.sigma ** 2

    def score_batch(self, xs, us):
        return _score_rows(self, np.atleast_2d(np.asarray(xs, dtype=float)),
                           np.atleast_2d(np.asarray(us, dtype=float)))


def sample_action(policy: GaussianPolicy, x, rng: np.random.Generator):
    mean = policy.mean(x)
    return mean + policy.sigma * rng.standard_normal(mean.size)


def score(policy: GaussianPolicy, x, u_s):
    return policy.score(x, u_s)


@dataclass(frozen=True)
class GradientEstimate:
    gradient: np.ndarray
    n: int
    stderr: np.ndarray
    dropped: int = 0
    degenerate: bool = False


def _estimate(terms, weights=None, dropped=0, degenerate=False):
    terms = np.asarray(terms, dtype=float)
    if terms.size == 0:
        raise EmptyBatch("no usable samples in the batch")
    terms = terms.reshape(terms.shape[0], -1)
    n = terms.shape[0]
    if weights is None:
        grad = terms.mean(axis=0)
        se = terms.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full(terms.shape[1], np.inf)
    else:
        w = np.asarray(weights, dtype=float) / np.sum(weights)
        grad = w @ terms
        se = np.sqrt(np.sum((w[:, None] * (terms - grad)) ** 2, axis=0))
    return GradientEstimate(grad, n, se, dropped, degenerate)


@dataclass(frozen=True)
class DetSample:
    """One state of a deterministic-policy batch.

    ``dpi_dtheta`` is grad_theta pi(x) (n_theta x m) and ``dA_du`` the advantage
    gradient at the projected input.
    """

    x: np.ndarray
    outcome: ProjectionOutcome
    dpi_dtheta: np.ndarray
    dA_du: np.ndarray
    weight: float = 1.0


def det_policy_gradient_corrected(batch: Sequence[DetSample]) -> GradientEstimate:
    """Weighted mean of grad_theta pi @ M @ grad_u A; weakly active samples are dropped."""
    terms, weights, dropped = [], [], 0
    for s in batch:
        if s.outcome.weak_activity or not s.outcome.licq:
            dropped += 1
            continue
        terms.append(s.dpi_dtheta @ s.outcome.M @ s.dA_du)
        weights.append(s.weight)
    return _estimate(terms, weights if terms else None, dropped)


def det_policy_gradient_naive(batch: Sequence[DetSample]) -> GradientEstimate:
    """Same average with the correction matrix M omitted."""
    terms, weights, dropped = [], [], 0
    for s in batch:
        if s.outcome.weak_activity or not s.outcome.licq:
            dropped += 1
            continue
        terms.append(s.dpi_dtheta @ s.dA_du)
        weights.append(s.weight)
    return _estimate(terms, weights if terms else None, dropped)


def _stochastic(policy, xs, eval_points, advantages):
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    eval_points = np.atleast_2d(np.asarray(eval_points, dtype=float))
    adv = np.asarray(advantages, dtype=float).reshape(-1)
    if adv.size == 0:
        raise EmptyBatch("no samples in the batch")
    scores = _score_rows(policy, xs, eval_points)
    return scores * adv[:, None]


def _score_rows(policy, xs, us):
    # vectorized score for the affine-mean Gaussian
    mp = policy.mean_map
    m, n = mp.m, mp.n
    means = mp.u_hat_ref - (xs - mp.x_hat_ref) @ mp.K.T
    r = (us - means) / policy.sigma ** 2
    dx = xs - mp.x_hat_ref
    out = np.empty((xs.shape[0], mp.n_params))
    out[:, :m] = r
    out[:, m:m + n] = r @ mp.K
    out[:, m + n:] = -(r[:, :, None] * dx[:, None, :]).reshape(xs.shape[0], m * n)
    return out


def stoch_policy_gradient_corrected(policy: GaussianPolicy, xs, u_s, u_proj, advantages):
    """Mean of score(x, u_s) * A(x, u_proj): score at the unprojected sample."""
    return _estimate(_stochastic(policy, xs, u_s, advantages))


def stoch_policy_gradient_naive(policy: GaussianPolicy, xs, u_s, u_proj, advantages):
    """Score evaluated at the projected input instead; biased when projections bite."""
    u_proj = np.atleast_2d(np.asarray(u_proj, dtype=float))
    degenerate = u_proj.shape[0] > 1 and np.unique(np.round(u_proj, 12), axis=0).shape[0] == 1
    est = _estimate(_stochastic(policy, xs, u_proj, advantages))
    return GradientEstimate(est.gradient, est.n, est.stderr, est.dropped, degenerate)


def ascend(theta, estimate: GradientEstimate, step_size):
    """One fixed-size descent step on the cost J: theta - step * gradient."""
    if not step_size >= 0:
        raise ValueError("step_size must be nonnegative")
    g = np.asarray(estimate.gradient, dtype=float)
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("gradient estimate contains non-finite entries")
    return np.asarray(theta, dtype=float) - step_size * g
