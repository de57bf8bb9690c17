"""Dense linear algebra and small constrained solvers.

Everything here is sized for problems with at most a few dozen variables:
dense factorizations, no sparsity, pure functions.
"""
from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import (
    DimensionMismatch,
    Infeasible,
    MaxIterations,
    NoConvergence,
    RankDeficient,
    Singular,
)

log = logging.getLogger(__name__)

# Activity thresholds used for every solution returned by solve_qp.
ACTIVE_TOL = 1e-7
MULTIPLIER_TOL = 1e-7
FEAS_TOL = 1e-8


class Activity(str, enum.Enum):
    INACTIVE = "inactive"
    STRICT = "strictly_active"
    WEAK = "weakly_active"


@dataclass(frozen=True)
class QuadConstraint:
    """u'Pu + q'u + r <= 0 with P symmetric PSD."""

    P: np.ndarray
    q: np.ndarray
    r: float

    def value(self, u):
        return float(u @ self.P @ u + self.q @ u + self.r)

    def gradient(self, u):
        return 2.0 * self.P @ u + self.q


@dataclass
class QpProblem:
    """min 1/2 u'Hu + g'u  s.t.  Gu <= b  and optional quadratic constraints.

    Linear constraints are indexed first, then the quadratic ones, in every
    array this module returns (values, multipliers, activity flags).
    """

    H: np.ndarray
    g: np.ndarray
    G: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    quad: Sequence[QuadConstraint] = field(default_factory=tuple)

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        n = self.g.size
        if self.H.shape != (n, n):
            raise DimensionMismatch(f"H is {self.H.shape}, expected {(n, n)}")
        if not np.allclose(self.H, self.H.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(self.H).max())):
            raise ValueError("H_cost must be symmetric")
        if self.G is None:
            self.G = np.zeros((0, n))
            self.b = np.zeros(0)
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.b.size != self.G.shape[0]:
            raise DimensionMismatch("G and b disagree on the number of constraints")
        quad = []
        for c in self.quad:
            P = np.atleast_2d(np.asarray(c.P, dtype=float))
            q = np.asarray(c.q, dtype=float).reshape(-1)
            if P.shape != (n, n) or q.size != n:
                raise DimensionMismatch("quadratic constraint has wrong dimension")
            quad.append(QuadConstraint(0.5 * (P + P.T), q, float(c.r)))
        self.quad = tuple(quad)
        # stacked copies for vectorized evaluation
        self._P = np.array([c.P for c in quad]).reshape(-1, n, n)
        self._q = np.array([c.q for c in quad]).reshape(-1, n)
        self._r = np.array([c.r for c in quad])

    @property
    def n(self):
        return self.g.size

    @property
    def n_lin(self):
        return self.b.size

    @property
    def n_constraints(self):
        return self.n_lin + len(self.quad)

    def cost(self, u):
        return float(0.5 * u @ self.H @ u + self.g @ u)

    def values(self, u):
        Pu = self._P @ u
        return np.concatenate([self.G @ u - self.b, Pu @ u + self._q @ u + self._r])

    def jacobian(self, u):
        return np.vstack([self.G, 2.0 * (self._P @ u) + self._q])

    def kkt_residual(self, u, mu):
        """Max of stationarity, primal infeasibility and complementarity."""
        s = self.values(u)
        stat = self.H @ u + self.g + self.jacobian(u).T @ mu
        parts = [np.abs(stat).max(initial=0.0),
                 np.maximum(s, 0.0).max(initial=0.0),
                 np.abs(mu * s).max(initial=0.0),
                 np.maximum(-mu, 0.0).max(initial=0.0)]
        return float(max(parts))


@dataclass(frozen=True)
class KktSolution:
    primal: np.ndarray
    multipliers: np.ndarray
    active_flags: tuple
    kkt_residual: float
    values: np.ndarray
    iterations: int = 0

    def indices(self, flag):
        return [i for i, f in enumerate(self.active_flags) if f == flag]


def classify(values, multipliers):
    flags = []
    for s, mu in zip(values, multipliers):
        if abs(s) <= ACTIVE_TOL:
            flags.append(Activity.STRICT if mu >= MULTIPLIER_TOL else Activity.WEAK)
        else:
            flags.append(Activity.INACTIVE)
    return tuple(flags)


def _dual_active_set(H, g, A, b, max_iter=None):
    """Goldfarb-Idnani dual active-set method for min 1/2 x'Hx + g'x, Ax <= b.

    Starts from the unconstrained minimizer and adds violated constraints one
    at a time, so no feasible starting point is needed and infeasibility is
    detected when a violated constraint cannot be added.
    """
    n = g.size
    m = b.size
    chol = sla.cho_factor(H, lower=True)
    x = -sla.cho_solve(chol, g)
    mu = np.zeros(m)
    if m == 0:
        return x, mu, 0
    h_norm = np.abs(H).max()
    row_norms = np.linalg.norm(A, axis=1)
    active: list[int] = []
    max_iter = max_iter or 50 * (m + n)
    it = 0
    while True:
        viol = A @ x - b
        tol = 1e-13 * (1.0 + np.abs(b) + row_norms * np.abs(x).max())
        viol = np.where(viol > tol, viol / np.maximum(row_norms, 1e-300), -np.inf)
        if active:
            viol[active] = -np.inf
        p = int(np.argmax(viol))
        if not np.isfinite(viol[p]):
            return x, mu, it
        n_p = A[p]
        mu_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                raise MaxIterations(f"dual active set exceeded {max_iter} iterations")
            k = len(active)
            if k:
                N = A[active].T
                kkt = np.zeros((n + k, n + k))
                kkt[:n, :n] = H
                kkt[:n, n:] = N
                kkt[n:, :n] = N.T
                sol = np.linalg.solve(kkt, np.concatenate([-n_p, np.zeros(k)]))
                z, r = sol[:n], sol[n:]
            else:
                z, r = -sla.cho_solve(chol, n_p), np.zeros(0)
            t1, drop = np.inf, None
            for j in range(k):
                if r[j] < -1e-15:
                    ratio = mu[active[j]] / -r[j]
                    if ratio < t1:
                        t1, drop = ratio, j
            zn = n_p @ z
            if np.linalg.norm(z) * h_norm <= 1e-11 * row_norms[p]:
                if drop is None:
                    raise Infeasible("constraint set is empty")
                mu[active] += t1 * r
                mu_p += t1
                mu[active[drop]] = 0.0
                del active[drop]
                continue
            t2 = max((n_p @ x - b[p]) / -zn, 0.0)
            if t2 <= t1:
                x = x + t2 * z
                if k:
                    mu[active] += t2 * r
                mu[p] = mu_p + t2
                active.append(p)
                break
            x = x + t1 * z
            mu[active] += t1 * r
            mu_p += t1
            mu[active[drop]] = 0.0
            del active[drop]


def _solution(problem, u, mu, iterations):
    mu = np.where(mu < 0.0, 0.0, mu)
    values = problem.values(u)
    res = problem.kkt_residual(u, mu)
    if np.maximum(values, 0.0).max(initial=0.0) > FEAS_TOL:
        raise Infeasible(f"no point satisfies the constraints (violation {values.max():.3e})")
    return KktSolution(u, mu, classify(values, mu), res, values, iterations)


def solve_qp(problem: QpProblem, start=None, tol=1e-12, max_iter=200) -> KktSolution:
    """Solve a convex QP or QCQP to a KKT residual below ``tol``.

    Pure QPs go straight to the dual active-set method. Quadratic constraints
    are handled by SQP with exact (constant) constraint Hessians, an l1 merit
    line search and a second-order correction against the Maratos effect.
    """
    H, g = problem.H, problem.g
    if not problem.quad:
        u, mu, its = _dual_active_set(H, g, problem.G, problem.b)
        return _solution(problem, u, mu, its)

    n, nl = problem.n, problem.n_lin
    nq = len(problem.quad)
    if start is None:
        u = -sla.cho_solve(sla.cho_factor(H, lower=True), g)
    else:
        u = np.asarray(start, dtype=float).reshape(-1).copy()
        if u.size != n:
            raise DimensionMismatch("start has the wrong dimension")
    mu = np.zeros(nl + nq)
    if np.all(problem.values(u) <= 0.0) and problem.kkt_residual(u, mu) <= tol:
        return _solution(problem, u, mu, 0)

    P2 = [2.0 * c.P for c in problem.quad]

    def merit(v, nu):
        return problem.cost(v) + nu * np.maximum(problem.values(v), 0.0).sum()

    nu = 1.0
    res = np.inf
    for it in range(1, max_iter + 1):
        W = H.copy()
        for i, P in enumerate(P2):
            W += mu[nl + i] * P
        values = problem.values(u)
        Jac = problem.jacobian(u)
        grad = H @ u + g
        d, mu_new, _ = _dual_active_set(W, grad, Jac, -values)
        nu = max(nu, 1.5 * mu_new.max(initial=0.0) + 1e-6)
        phi0 = merit(u, nu)
        slope = grad @ d - nu * np.maximum(values, 0.0).sum()
        alpha, step = 1.0, d
        if merit(u + d, nu) > phi0 + 1e-4 * slope:
            act = np.flatnonzero((mu_new > 0.0) | (values + Jac @ d >= -1e-12))
            trial = problem.values(u + d)[act]
            if act.size:
                corr = -np.linalg.lstsq(Jac[act], trial, rcond=None)[0]
                if merit(u + d + corr, nu) <= phi0 + 1e-4 * slope:
                    step = d + corr
            if step is d:
                while merit(u + alpha * d, nu) > phi0 + 1e-4 * alpha * slope and alpha > 1e-10:
                    alpha *= 0.5
                step = alpha * d
        u = u + step
        mu = mu + alpha * (mu_new - mu)
        res = problem.kkt_residual(u, np.maximum(mu, 0.0))
        if res <= tol:
            return _solution(problem, u, mu, it)
        if np.abs(step).max() <= 1e-15 * (1.0 + np.abs(u).max()):
            break
    if res <= FEAS_TOL:
        return _solution(problem, u, mu, max_iter)
    if np.maximum(problem.values(u), 0.0).max() > FEAS_TOL:
        raise Infeasible(f"SQP stalled at constraint violation {problem.values(u).max():.3e}")
    raise MaxIterations(f"SQP stopped with KKT residual {res:.3e}")


def nullspace_orthonormal(J_active, m=None, rank_tol=1e-10):
    """Orthonormal basis N of {d : J_active d = 0}.

    ``m`` is the input dimension; it is only needed when J_active has no rows.
    Raises RankDeficient if the rows of J_active are linearly dependent.
    """
    J = np.asarray(J_active, dtype=float)
    if J.size == 0:
        if m is None:
            m = J.shape[1] if J.ndim == 2 else 0
        return np.eye(m)
    J = np.atleast_2d(J)
    k, m = J.shape
    if k > m:
        raise RankDeficient(f"{k} active constraints in dimension {m}")
    Q, R, _ = sla.qr(J.T, pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rank_tol * max(diag[0], 1e-300)))
    if rank < k:
        raise RankDeficient(f"active Jacobian has rank {rank} < {k}")
    return Q[:, k:]


def solve_dare(A, B, Q, R, tol=1e-12, max_iter=100_000):
    """LQR gain K (u = -Kx) from the discrete algebraic Riccati equation."""
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        G = R + BtP @ B
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(G, BtP @ A)
        P_next = 0.5 * (P_next + P_next.T)
        delta = np.abs(P_next - P).max()
        P = P_next
        if delta <= tol * max(1.0, np.abs(P).max()):
            break
    else:
        raise NoConvergence(f"Riccati iteration did not settle in {max_iter} steps")
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return K


def dare_residual(A, B, Q, R, K):
    """Residual of the Riccati fixed point implied by gain K."""
    A, B, Q, R, K = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R, K))
    Acl = A - B @ K
    # Lyapunov solve for the cost-to-go of u = -Kx, then compare with the Riccati map.
    P = sla.solve_discrete_lyapunov(Acl.T, Q + K.T @ R @ K)
    rhs = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return float(np.abs(P - rhs).max())


def linear_solve(A, b, pivot_tol=1e-14):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"cannot solve {A.shape} system with rhs {b.shape}")
    if A.shape[0] == 0:
        return b.copy()
    with warnings.catch_warnings():
        # singularity is reported below through the pivot check
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.min() < pivot_tol * max(1.0, np.abs(A).max()):
        raise Singular(f"pivot {pivots.min():.3e} below {pivot_tol}")
    if log.isEnabledFor(logging.DEBUG):
        log.debug("linear_solve: condition estimate %.3e", np.linalg.cond(A))
    x = sla.lu_solve((lu, piv), b)
    # one round of iterative refinement
    x = x + sla.lu_solve((lu, piv), b - A @ x)
    return x
