"""Robust tube MPC used as an implicit safe-set projection.

The dispersion of the true system around the nominal prediction is bounded
by balls B(xbar_k, r_k). Tightening x'x <= 1 over such a ball gives
||xbar_k|| <= 1 - r_k, imposed here in squared form. The projection NLP is
condensed onto the input sequence u_0..u_{N-1} and solved as a convex QCQP.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible, LicqViolation, RankDeficient, TubeInfeasible, WeakActivity
from .optim import Activity, QpProblem, QuadConstraint, nullspace_orthonormal, solve_dare, solve_qp

TUBE_NORMS = ("closed_loop_2", "open_loop_inf")


def rotation(deg):
    """Clockwise rotation [[cos a, sin a], [-sin a, cos a]]."""
    a = np.deg2rad(deg)
    return np.array([[np.cos(a), np.sin(a)], [-np.sin(a), np.cos(a)]])


@dataclass(frozen=True)
class StageCost:
    """L(x, u) = x_weight ||x - x_ref||^2 + u_weight ||u - u_ref||^2."""

    x_ref: np.ndarray
    u_ref: np.ndarray
    x_weight: float = 1e-2
    u_weight: float = 1.0

    def __call__(self, x, u):
        dx = np.asarray(x, dtype=float) - self.x_ref
        du = np.asarray(u, dtype=float) - self.u_ref
        return float(self.x_weight * dx @ dx + self.u_weight * du @ du)


def tube_radii(contraction, n_max, horizon, model_error=0.0):
    r = np.zeros(horizon + 1)
    for k in range(horizon):
        r[k + 1] = contraction * r[k] + n_max + model_error
    return r


@dataclass(frozen=True)
class TubeMpcProblem:
    A_hat: np.ndarray
    B: np.ndarray
    K_S: np.ndarray
    horizon: int
    gamma: float
    n_max: float
    model_error: float
    contraction: float
    tube_norm: str
    radii: np.ndarray
    cost: StageCost
    state_radius: float = 1.0
    # condensed prediction xbar_k = Phi[k] x + Gamma[k] u, u stacked (N*m,)
    Phi: np.ndarray = field(repr=False, default=None)
    Gamma: np.ndarray = field(repr=False, default=None)
    H: np.ndarray = field(repr=False, default=None)
    P_con: tuple = field(repr=False, default=())

    @property
    def n(self):
        return self.A_hat.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def tightened(self):
        return self.state_radius - self.radii

    def predict(self, x, u_flat):
        return np.array([self.Phi[k] @ x + self.Gamma[k] @ u_flat for k in range(self.horizon + 1)])


def build_tube(A_hat, B, K_S, horizon, gamma, n_max, cost: StageCost, tube_norm="closed_loop_2",
               model_error=0.0, contraction=None, state_radius=1.0) -> TubeMpcProblem:
    """Radii r_0 = 0, r_{k+1} = c r_k + n_max + model_error, and condensed matrices.

    ``tube_norm`` picks c: the induced 2-norm of A_hat - B K_S (default) or the
    open-loop infinity norm of A_hat. ``contraction`` overrides both.
    """
    A_hat = np.atleast_2d(np.asarray(A_hat, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    K_S = np.atleast_2d(np.asarray(K_S, dtype=float))
    if not n_max > 0:
        raise ValueError("n_max must be positive")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if contraction is None:
        if tube_norm == "closed_loop_2":
            contraction = float(np.linalg.norm(A_hat - B @ K_S, 2))
            if contraction >= 1.0:
                raise TubeInfeasible(f"closed-loop tube matrix is not contractive ({contraction:.4f})")
        elif tube_norm == "open_loop_inf":
            contraction = float(np.linalg.norm(A_hat, np.inf))
        else:
            raise ValueError(f"tube_norm must be one of {TUBE_NORMS}")
    radii = tube_radii(contraction, n_max, horizon, model_error)
    if np.any(radii >= state_radius):
        k = int(np.argmax(radii >= state_radius))
        raise TubeInfeasible(f"tube radius r_{k} = {radii[k]:.4f} reaches the constraint radius")

    n, m, N = A_hat.shape[0], B.shape[1], horizon
    Phi = np.zeros((N + 1, n, n))
    Gamma = np.zeros((N + 1, n, N * m))
    Phi[0] = np.eye(n)
    for k in range(N):
        Phi[k + 1] = A_hat @ Phi[k]
        Gamma[k + 1] = A_hat @ Gamma[k]
        Gamma[k + 1][:, k * m:(k + 1) * m] = B
    H = np.zeros((N * m, N * m))
    H[:m, :m] = np.eye(m)
    for k in range(1, N):
        w = gamma ** k
        H += 2.0 * w * cost.x_weight * Gamma[k].T @ Gamma[k]
        H[k * m:(k + 1) * m, k * m:(k + 1) * m] += 2.0 * w * cost.u_weight * np.eye(m)
    H = 0.5 * (H + H.T)
    P_con = tuple(Gamma[k].T @ Gamma[k] for k in range(1, N + 1))
    return TubeMpcProblem(A_hat, B, K_S, N, gamma, n_max, model_error, contraction, tube_norm,
                          radii, cost, state_radius, Phi, Gamma, H, P_con)


def nominal_model(scale=1.1, a_hat_deg=25.0):
    """Nominal model of the simulated example and its LQR gain for Q = R = I."""
    A_hat = scale * rotation(a_hat_deg)
    B = np.eye(2)
    K_S = solve_dare(A_hat, B, np.eye(2), np.eye(2))
    return A_hat, B, K_S


@dataclass(frozen=True)
class MpcSolution:
    u: np.ndarray
    x_bar: np.ndarray
    multipliers: np.ndarray
    flags: tuple
    kkt_residual: float
    qp: QpProblem = field(repr=False)

    @property
    def u0(self):
        return self.u[0]

    @property
    def active(self):
        return tuple(i for i, f in enumerate(self.flags) if f == Activity.STRICT)

    @property
    def weak_activity(self):
        return any(f == Activity.WEAK for f in self.flags)

    def first_input_M(self):
        """Correction matrix of u_0 w.r.t. its target, condensed from the full NLP.

        With W the Lagrangian Hessian of the condensed problem and N a null
        space of the strictly active constraint gradients, the sensitivity of
        the whole input sequence to the target is N (N'WN)^-1 N' E0; its first
        block row gives the (symmetric) m x m matrix returned here.
        """
        if self.weak_activity:
            raise WeakActivity("weakly active tube constraint")
        m = self.u.shape[1]
        W = self.qp.H.copy()
        J = []
        for i in self.active:
            c = self.qp.quad[i]
            W += self.multipliers[i] * 2.0 * c.P
            J.append(c.gradient(self.qp_solution_vector))
        try:
            N = nullspace_orthonormal(np.array(J).reshape(-1, W.shape[0]), W.shape[0])
        except RankDeficient as exc:
            raise LicqViolation(str(exc)) from exc
        if N.shape[1] == 0:
            return np.zeros((m, m))
        N0 = N[:m]
        M0 = N0 @ np.linalg.solve(N.T @ W @ N, N0.T)
        return 0.5 * (M0 + M0.T)

    @property
    def qp_solution_vector(self):
        return self.u.reshape(-1)


def _qp(problem: TubeMpcProblem, x, u_target):
    N, m = problem.horizon, problem.m
    c = problem.cost
    g = np.zeros(N * m)
    g[:m] = -u_target
    for k in range(1, N):
        w = problem.gamma ** k
        g += 2.0 * w * c.x_weight * problem.Gamma[k].T @ (problem.Phi[k] @ x - c.x_ref)
        g[k * m:(k + 1) * m] -= 2.0 * w * c.u_weight * c.u_ref
    quad = []
    for k in range(1, N + 1):
        free = problem.Phi[k] @ x
        quad.append(QuadConstraint(problem.P_con[k - 1], 2.0 * problem.Gamma[k].T @ free,
                                   float(free @ free - problem.tightened[k] ** 2)))
    return QpProblem(problem.H, g, quad=quad)


def solve_projection_mpc(problem: TubeMpcProblem, x, u_target) -> MpcSolution:
    """Minimize 1/2||u_0 - u_target||^2 + sum_{k=1}^{N-1} gamma^k L(xbar_k, u_k) over the tube."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u_target = np.asarray(u_target, dtype=float).reshape(-1)
    if x @ x > problem.state_radius ** 2 + 1e-9:
        raise Infeasible(f"state norm {np.sqrt(x @ x):.6f} exceeds the safe radius")
    qp = _qp(problem, x, u_target)
    sol = solve_qp(qp)
    u = sol.primal.reshape(problem.horizon, problem.m)
    return MpcSolution(u, problem.predict(x, sol.primal), sol.multipliers, sol.active_flags,
                       sol.kkt_residual, qp)


def mpc_first_input_sensitivity(solution: MpcSolution, dpi_dtheta):
    """grad_theta u_0 = grad_theta pi (n_theta x m) @ M0."""
    return np.atleast_2d(np.asarray(dpi_dtheta, dtype=float)) @ solution.first_input_M()


def mpc_stochastic_projection(problem: TubeMpcProblem, x, u_s):
    return solve_projection_mpc(problem, x, u_s).u0


def plan_within_tube(problem: TubeMpcProblem, solution: MpcSolution, tol=1e-8):
    norms = np.linalg.norm(solution.x_bar[1:], axis=1)
    return bool(np.all(norms <= problem.tightened[1:] + tol))


def one_step_error_bound(A_true, A_hat, n_max, state_radius=1.0):
    """Worst one-step gap between the true and nominal successor states."""
    return float(np.linalg.norm(np.asarray(A_true) - np.asarray(A_hat), 2) * state_radius + n_max)
