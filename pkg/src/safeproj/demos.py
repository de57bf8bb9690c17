"""Small self-contained demonstrations with exact or quadrature oracles.

Each ``demo_*`` function returns a mapping file name -> CSV text.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from .errors import UnknownDemo
from .policy import (
    AffinePolicy,
    DetSample,
    GaussianPolicy,
    det_policy_gradient_corrected,
    det_policy_gradient_naive,
    stoch_policy_gradient_corrected,
    stoch_policy_gradient_naive,
)
from .projection import boundary_mass_histogram, project
from .q_safe import QuadraticQ, extract_projected_policy, extract_safe_policy
from .safe_set import ConstraintSet
from .tube_mpc import rotation


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


# -- loss of optimality from projecting the unconstrained argmin -----------------

def fig1_instance():
    """Q(u) = (u1 - 2)^2 + 10 u2^2 with the halfspace u1 + u2 <= 0."""
    q = QuadraticQ.from_matrices(np.diag([2.0, 20.0]), [-4.0, 0.0], 4.0)
    return q, ConstraintSet.affine([[1.0, 1.0]], [0.0])


def demo_fig1(**_):
    q, cset = fig1_instance()
    x = np.zeros(1)
    rows = []
    for name, fn in (("safe", extract_safe_policy), ("projected", extract_projected_policy)):
        u = fn(q, cset, x)
        rows.append([name, float(u[0]), float(u[1]), q.value(x, u)])
    return {"fig1.csv": _csv(["policy", "u1", "u2", "qvalue"], rows)}


# -- boundary mass of projected Gaussian samples --------------------------------

def demo_fig2(seed=0, n=100_000, **_):
    disk = ConstraintSet.ball(np.zeros(2), 1.0)
    out, summary = {}, []
    for k, (label, mean, sd) in enumerate((("far", (2.0, 0.0), 0.3), ("centered", (0.0, 0.0), 0.1))):
        rng = np.random.default_rng([int(seed), k])
        hist = boundary_mass_histogram(disk, np.zeros(1), lambda m: np.asarray(mean) + sd * rng.standard_normal((m, 2)), n)
        out[f"fig2_{label}.csv"] = hist.to_csv()
        summary.append([label, float(mean[0]), float(mean[1]), float(sd), hist.n, hist.boundary_fraction])
    out["fig2_summary.csv"] = _csv(["case", "mean1", "mean2", "sd", "samples", "boundary_fraction"], summary)
    return out


# -- stochastic estimators on a one-step clipped problem -------------------------

@dataclass(frozen=True)
class ClipProblem:
    """One step: u_s ~ N(theta, sigma^2), applied u = min(u_s, bound), cost (u - target)^2."""

    theta: float = 1.0
    sigma: float = 1.0
    bound: float = 1.0
    target: float = 2.0

    def cost(self, u):
        return (np.asarray(u) - self.target) ** 2

    def expected_cost(self):
        s, a = self.sigma, (self.bound - self.theta) / self.sigma
        F, f = stats.norm.cdf(a), stats.norm.pdf(a)
        d = self.theta - self.target
        below = (d ** 2 + s ** 2) * F - s * (2 * d + s * a) * f
        return float(below + (1.0 - F) * (self.bound - self.target) ** 2)

    def gradient_closed_form(self):
        # only the unclipped part depends on theta
        a = (self.bound - self.theta) / self.sigma
        return float(2.0 * ((self.theta - self.target) * stats.norm.cdf(a) - self.sigma * stats.norm.pdf(a)))

    def gradient_quadrature(self):
        """E[c'(u_s) 1{u_s < bound}] by adaptive quadrature on the unclipped half-line."""
        a = (self.bound - self.theta) / self.sigma
        val, _ = integrate.quad(lambda z: 2.0 * (self.theta + self.sigma * z - self.target) * stats.norm.pdf(z),
                                -np.inf, a, epsabs=1e-13, epsrel=1e-12)
        return float(val)

    def mass_beyond(self):
        return float(stats.norm.sf((self.bound - self.theta) / self.sigma))

    def policy(self):
        return GaussianPolicy(AffinePolicy([self.theta], [0.0], [[0.0]]), self.sigma)


def clip_estimates(problem: ClipProblem, n, seed=0):
    """Corrected and naive score-function estimates of dJ/dtheta (first parameter)."""
    rng = np.random.default_rng(int(seed))
    pol = problem.policy()
    xs = np.zeros((n, 1))
    u_s = problem.theta + problem.sigma * rng.standard_normal((n, 1))
    u = np.minimum(u_s, problem.bound)
    adv = problem.cost(u[:, 0]) - problem.expected_cost()
    return (stoch_policy_gradient_corrected(pol, xs, u_s, u, adv),
            stoch_policy_gradient_naive(pol, xs, u_s, u, adv))


def demo_bias_stoch(seed=0, n=1_000_000, **_):
    prob = ClipProblem()
    oracle = prob.gradient_quadrature()
    corrected, naive = clip_estimates(prob, n, seed)
    rows = []
    for name, est in (("corrected", corrected), ("naive", naive)):
        g, se = float(est.gradient[0]), float(est.stderr[0])
        rows.append([name, g, se, oracle, (g - oracle) / se])
    return {"bias_stoch.csv": _csv(["estimator", "gradient", "stderr", "oracle", "z_score"], rows)}


# -- deterministic estimators on a noise-free plant with a halfspace --------------

@dataclass(frozen=True)
class HalfspacePlant:
    """x+ = A x + u with u restricted to a.u <= b; cost x'x + ||u - u_goal||^2."""

    A: np.ndarray
    a: np.ndarray
    b: float
    u_goal: np.ndarray
    x0: np.ndarray
    gamma: float = 0.9
    horizon: int = 60

    @property
    def cset(self):
        return ConstraintSet.affine([self.a], [self.b])

    def stage_cost(self, x, u):
        return float(x @ x + (u - self.u_goal) @ (u - self.u_goal))

    def simulate(self, policy: AffinePolicy):
        xs, outs = [], []
        x = self.x0.copy()
        for _ in range(self.horizon):
            o = project(self.cset, x, policy.mean(x))
            xs.append(x)
            outs.append(o)
            x = self.A @ x + o.u_proj
        return xs, outs

    def truncated_return(self, policy: AffinePolicy):
        xs, outs = self.simulate(policy)
        return sum(self.gamma ** t * self.stage_cost(x, o.u_proj) for t, (x, o) in enumerate(zip(xs, outs)))


def default_halfspace_plant():
    return HalfspacePlant(A=0.9 * rotation(20.0), a=np.array([1.0, 1.0]), b=0.0,
                          u_goal=np.array([1.0, 0.2]), x0=np.array([0.0, 1.0]))


def default_halfspace_policy():
    return AffinePolicy([0.8, 0.3], [0.1, -0.1], [[0.3, 0.1], [-0.1, 0.2]])


def det_gradient_batch(plant: HalfspacePlant, policy: AffinePolicy):
    """Per-step samples with the exact input-gradient of the time-varying Q.

    dQ_t/du = dL/du + gamma dV_{t+1}/dx, with dV/dx propagated backwards
    through the closed loop (projection Jacobian M acting on the state path).
    """
    xs, outs = plant.simulate(policy)
    T = len(xs)
    lam = np.zeros_like(plant.x0)  # dV_T/dx = 0 at the truncation
    dQ = [None] * T
    for t in reversed(range(T)):
        x, o = xs[t], outs[t]
        u = o.u_proj
        dLdu = 2.0 * (u - plant.u_goal)
        dQ[t] = dLdu + plant.gamma * lam
        dpi_dx = -policy.K  # d pi / dx, m x n
        du_dx = o.M @ dpi_dx
        lam = 2.0 * x + plant.gamma * plant.A.T @ lam + du_dx.T @ dQ[t]
    return [DetSample(xs[t], outs[t], policy.grad_theta(xs[t]), dQ[t], plant.gamma ** t) for t in range(T)]


def det_gradients(plant: HalfspacePlant, policy: AffinePolicy, fd_step=1e-6):
    """(corrected, naive, finite-difference) gradients of the truncated return."""
    batch = det_gradient_batch(plant, policy)
    scale = sum(s.weight for s in batch)
    corrected = det_policy_gradient_corrected(batch)
    naive = det_policy_gradient_naive(batch)
    theta = policy.theta
    fd = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = fd_step
        fd[i] = (plant.truncated_return(policy.with_theta(theta + e))
                 - plant.truncated_return(policy.with_theta(theta - e))) / (2.0 * fd_step)
    active = sum(1 for s in batch if s.outcome.active)
    return scale * corrected.gradient, scale * naive.gradient, fd, active, corrected.dropped


def angle_deg(a, b):
    c = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def demo_bias_det(**_):
    plant, policy = default_halfspace_plant(), default_halfspace_policy()
    corrected, naive, fd, active, dropped = det_gradients(plant, policy)
    rows = []
    for name, g in (("corrected", corrected), ("naive", naive), ("finite_difference", fd)):
        rel = float(np.linalg.norm(g - fd) / np.linalg.norm(fd))
        rows.append([name, *map(float, g), rel, angle_deg(g, fd)])
    header = ["estimator", *[f"g{i + 1}" for i in range(fd.size)], "rel_error_vs_fd", "angle_deg_vs_fd"]
    return {"bias_det.csv": _csv(header, rows)}


DEMOS = {
    "fig1": demo_fig1,
    "fig2": demo_fig2,
    "bias-det": demo_bias_det,
    "bias-stoch": demo_bias_stoch,
}


def run_demo(name, seed=0):
    try:
        fn = DEMOS[name]
    except KeyError:
        raise UnknownDemo(f"unknown demo {name!r}; choose from {', '.join(DEMOS)}") from None
    return fn(seed=seed)
