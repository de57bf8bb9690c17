"""Independent reference computations used by the tests.

None of these share code with the package solvers.
"""
import itertools

import numpy as np
from scipy import optimize


def project_bruteforce(target, G=None, b=None, ball=None, tol=1e-9):
    """Euclidean projection onto {G u <= b} (optionally intersected with a ball).

    Enumerates every active subset, solves its KKT system and keeps the
    feasible point with valid multipliers and the lowest cost. ``ball`` is
    (center, radius).
    """
    t = np.asarray(target, dtype=float)
    m = t.size
    G = np.zeros((0, m)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float)
    best, best_cost = None, np.inf

    def feasible(u):
        ok = np.all(G @ u <= b + tol)
        if ball is not None:
            c, rho = ball
            ok = ok and np.sum((u - c) ** 2) <= rho ** 2 + tol
        return ok

    n_lin = G.shape[0]
    ball_options = (False, True) if ball is not None else (False,)
    for k in range(n_lin + 1):
        for subset in itertools.combinations(range(n_lin), k):
            GA, bA = G[list(subset)], b[list(subset)]
            for with_ball in ball_options:
                sol = _kkt_point(t, GA, bA, ball if with_ball else None)
                if sol is None:
                    continue
                u, lam, mu = sol
                if np.any(lam < -tol) or mu < -tol or not feasible(u):
                    continue
                cost = 0.5 * np.sum((u - t) ** 2)
                if cost < best_cost - 1e-15:
                    best, best_cost = u, cost
    return best


def _affine_point(t, GA, bA, shift, scale):
    """u = (t + shift - GA' lam) / scale with GA u = bA."""
    if GA.shape[0] == 0:
        return (t + shift) / scale, np.zeros(0)
    K = GA @ GA.T
    if np.linalg.matrix_rank(K) < GA.shape[0]:
        return None
    lam = np.linalg.solve(K, GA @ (t + shift) - scale * bA)
    return (t + shift - GA.T @ lam) / scale, lam


def _kkt_point(t, GA, bA, ball):
    if ball is None:
        out = _affine_point(t, GA, bA, 0.0, 1.0)
        return None if out is None else (out[0], out[1], 0.0)
    c, rho = np.asarray(ball[0], dtype=float), float(ball[1])

    def gap(mu):
        out = _affine_point(t, GA, bA, 2.0 * mu * c, 1.0 + 2.0 * mu)
        return np.sum((out[0] - c) ** 2) - rho ** 2

    if _affine_point(t, GA, bA, 0.0, 1.0) is None:
        return None
    lo, hi = 0.0, 1.0
    if gap(lo) < 0:
        return None
    while gap(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            return None
    mu = optimize.brentq(gap, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    u, lam = _affine_point(t, GA, bA, 2.0 * mu * c, 1.0 + 2.0 * mu)
    return u, lam, mu


def central_jacobian(f, theta, h=1e-5):
    """(n_theta x m) matrix with row i = d f / d theta_i (gradient convention)."""
    theta = np.asarray(theta, dtype=float)
    rows = []
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        rows.append((np.asarray(f(theta + e)) - np.asarray(f(theta - e))) / (2.0 * h))
    return np.array(rows)


def scalar_dare_gain(a, b, q, r):
    """Positive root of p = q + a^2 p - a^2 b^2 p^2 / (r + b^2 p), then k."""
    # b^2 p^2 + (r - a^2 r - q b^2) p - q r = 0
    A = b ** 2
    B = r - a ** 2 * r - q * b ** 2
    C = -q * r
    p = (-B + np.sqrt(B ** 2 - 4 * A * C)) / (2 * A)
    return a * b * p / (r + b ** 2 * p), p


def chain_values(P, L, gamma):
    """Exact V = (I - gamma P)^-1 L for a finite Markov chain."""
    P = np.asarray(P, dtype=float)
    return np.linalg.solve(np.eye(P.shape[0]) - gamma * P, np.asarray(L, dtype=float))


def random_ball_instance(rng, m):
    c = rng.normal(size=m) * 0.5
    rho = rng.uniform(0.3, 2.0)
    return c, rho
