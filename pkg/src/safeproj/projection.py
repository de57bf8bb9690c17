"""Euclidean projection onto S(x) and the sensitivity of the projected policy.

``project`` returns the projected input together with everything needed to
differentiate it: the strictly active index set, an orthonormal null space N
of the active constraint gradients, the Lagrangian Hessian H and the
correction matrix M = N (N'HN)^-1 N', so that d(pi_perp)/d(theta) equals
d(pi)/d(theta) @ M away from weakly active points.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (
    Infeasible,
    InfeasibleSafeSet,
    LicqViolation,
    MaxIterations,
    NoInteriorPoint,
    RankDeficient,
    WeakActivity,
)
from .optim import (
    ACTIVE_TOL,
    Activity,
    QpProblem,
    QuadConstraint,
    classify,
    nullspace_orthonormal,
    solve_qp,
)
from .safe_set import MEMBER_TOL, ConstraintSet

FRACTION_TO_BOUNDARY = 0.995


@dataclass(frozen=True)
class ProjectionOutcome:
    target: np.ndarray
    u_proj: np.ndarray
    multipliers: np.ndarray
    values: np.ndarray
    flags: tuple
    active: tuple
    nullspace: Optional[np.ndarray]
    hessian: np.ndarray
    M: Optional[np.ndarray]
    kkt_residual: float
    weak_activity: bool
    licq: bool
    affine_active: bool

    @property
    def fully_blocked(self):
        return self.nullspace is not None and self.nullspace.shape[1] == 0


def _split(forms):
    """Indices of state-only, affine-in-u and genuinely quadratic forms."""
    state_only, lin, quad = [], [], []
    for i, f in enumerate(forms):
        if not f.P.any():
            (state_only if not f.q.any() else lin).append(i)
        else:
            quad.append(i)
    return state_only, lin, quad


def minimize_quadratic(cset: ConstraintSet, x, H, g, start=None):
    """argmin 1/2 u'Hu + g'u over S(x).

    Returns (u, multipliers, values, kkt_residual, forms, state_only) with the
    multipliers and values aligned with ``cset.forms(x)``. Input-independent
    constraints are checked up front and never enter the solver.
    """
    m = cset.n_input
    forms = cset.forms(x)
    state_only, lin, quad = _split(forms)
    for i in state_only:
        if forms[i].r > MEMBER_TOL:
            raise InfeasibleSafeSet(f"state violates constraint {i} (value {forms[i].r:.3e})")
    problem = QpProblem(
        H, g,
        np.array([forms[i].q for i in lin]).reshape(-1, m),
        np.array([-forms[i].r for i in lin]),
        [forms[i] for i in quad],
    )
    try:
        sol = solve_qp(problem, start=start)
    except Infeasible as exc:
        raise InfeasibleSafeSet(str(exc)) from exc
    mu = np.zeros(len(forms))
    mu[lin + quad] = sol.multipliers
    values = np.array([f.value(sol.primal) for f in forms])
    return sol.primal, mu, values, sol.kkt_residual, forms, state_only


def project(cset: ConstraintSet, x, target) -> ProjectionOutcome:
    """argmin 1/2 ||u - target||^2 over S(x), plus sensitivity data.

    Raises InfeasibleSafeSet if S(x) is empty. A rank-deficient active
    Jacobian does not raise here; the outcome then has ``licq=False`` and no M.
    """
    target = cset._check(target)
    m = cset.n_input
    forms = cset.forms(x)
    values = np.array([f.value(target) for f in forms])
    if values.size == 0 or values.max() <= 0.0:
        u, mu, residual = target.copy(), np.zeros(len(forms)), 0.0
        state_only = _split(forms)[0]
    else:
        u, mu, values, residual, forms, state_only = minimize_quadratic(
            cset, x, np.eye(m), -target, start=target)

    flags = list(classify(values, mu))
    for i in state_only:
        flags[i] = Activity.INACTIVE
    flags = tuple(flags)
    active = tuple(i for i, f in enumerate(flags) if f == Activity.STRICT)
    weak = any(f == Activity.WEAK for f in flags)

    H = np.eye(m)
    for i in active:
        H += mu[i] * 2.0 * forms[i].P
    J = np.array([forms[i].gradient(u) for i in active]).reshape(-1, m)
    try:
        N = nullspace_orthonormal(J, m)
    except RankDeficient:
        N, M, licq = None, None, False
    else:
        licq = True
        if N.shape[1] == 0:
            M = np.zeros((m, m))
        else:
            M = N @ np.linalg.solve(N.T @ H @ N, N.T)
            M = 0.5 * (M + M.T)
    affine_active = all(not forms[i].P.any() for i in active)
    return ProjectionOutcome(target, u, mu, values, flags, active, N, H, M,
                             residual, weak, licq, affine_active)


def policy_jacobian_projected(outcome: ProjectionOutcome, dpi_dtheta):
    """Gradient of the projected policy: dpi_dtheta (n_theta x m) @ M."""
    if not outcome.licq:
        raise LicqViolation("active constraint gradients are linearly dependent")
    if outcome.weak_activity:
        raise WeakActivity("weakly active constraint at the projection")
    return np.atleast_2d(np.asarray(dpi_dtheta, dtype=float)) @ outcome.M


def _interior_start(cset, x, target, forms, idx):
    values = np.array([forms[i].value(target) for i in idx])
    if values.size == 0 or values.max() < 0.0:
        return target
    m = cset.n_input
    lin = [i for i in idx if not forms[i].P.any()]
    quad = [i for i in idx if forms[i].P.any()]
    delta = 1e-2
    while delta > 1e-14:
        tightened = [QuadConstraint(forms[i].P, forms[i].q, forms[i].r + delta) for i in quad]
        problem = QpProblem(
            np.eye(m), -target,
            np.array([forms[i].q for i in lin]).reshape(-1, m),
            np.array([-forms[i].r - delta for i in lin]),
            tightened,
        )
        try:
            u = solve_qp(problem, start=target).primal
        except (Infeasible, MaxIterations):
            delta *= 0.1
            continue
        if max(forms[i].value(u) for i in idx) < 0.0:
            return u
        delta *= 0.1
    raise NoInteriorPoint("no strictly feasible input found")


def project_interior_point(cset: ConstraintSet, x, target, tau, tol=1e-10, max_iter=200):
    """Barrier-smoothed projection: argmin 1/2||u - target||^2 - tau sum log(-s_i).

    Damped Newton with fraction-to-boundary clipping. The result differs from
    the exact projection by O(tau).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    target = cset._check(target)
    m = cset.n_input
    forms = cset.forms(x)
    state_only, lin, quad = _split(forms)
    for i in state_only:
        if forms[i].r >= 0.0:
            raise NoInteriorPoint(f"state-only constraint {i} has no interior")
    idx = lin + quad
    u = _interior_start(cset, x, target, forms, idx)
    fs = [forms[i] for i in idx]

    def objective(v):
        s = np.array([f.value(v) for f in fs])
        if s.size and s.max() >= 0.0:
            return np.inf
        return 0.5 * (v - target) @ (v - target) - tau * np.log(-s).sum()

    for _ in range(max_iter):
        s = np.array([f.value(u) for f in fs])
        grads = np.array([f.gradient(u) for f in fs]).reshape(-1, m)
        grad = (u - target) + tau * (grads / -s[:, None]).sum(axis=0)
        if np.abs(grad).max() <= tol:
            return u
        hess = np.eye(m)
        for f, si, gi in zip(fs, s, grads):
            hess += tau * (np.outer(gi, gi) / si ** 2 + 2.0 * f.P / -si)
        d = -np.linalg.solve(hess, grad)
        alpha = 1.0
        while True:
            trial = np.array([f.value(u + alpha * d) for f in fs])
            if trial.size == 0 or np.all(trial <= (1.0 - FRACTION_TO_BOUNDARY) * s):
                break
            alpha *= 0.5
        slope = grad @ d
        if -slope <= tol * tol:
            return u + alpha * d
        # near the minimizer the objective change drowns in round-off; take the Newton step
        if -slope > 0.25:
            f0 = objective(u)
            while objective(u + alpha * d) > f0 + 1e-4 * alpha * slope and alpha > 1e-12:
                alpha *= 0.5
        u = u + alpha * d
    raise MaxIterations("interior-point Newton did not converge")


def _single_block_kind(cset, x):
    if len(cset.blocks) != 1:
        return None
    blk = cset.blocks[0]
    if blk.kind == "input_ball":
        return "ball"
    if blk.kind == "affine" and blk.count(x, cset.n_input) == 1:
        return "halfspace"
    return None


def project_many(cset: ConstraintSet, x, targets):
    """Project each row of ``targets``; closed form for a single ball or halfspace.

    Returns (projected inputs, on-boundary mask) where on-boundary means some
    constraint value is within ACTIVE_TOL of zero.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if targets.shape[0] == 0:
        return targets.copy(), np.zeros(0, dtype=bool)
    kind = _single_block_kind(cset, x)
    if kind == "ball":
        f = cset.forms(x)[0]
        c = -0.5 * f.q
        rho = np.sqrt(c @ c - f.r)
        diff = targets - c
        dist = np.linalg.norm(diff, axis=1)
        scale = np.where(dist > rho, rho / np.maximum(dist, 1e-300), 1.0)
        out = c + diff * scale[:, None]
        vals = np.sum((out - c) ** 2, axis=1) - rho ** 2
        return out, np.abs(vals) <= ACTIVE_TOL
    if kind == "halfspace":
        f = cset.forms(x)[0]
        a, b = f.q, -f.r
        excess = targets @ a - b
        out = targets - np.maximum(excess, 0.0)[:, None] * a / (a @ a)
        return out, np.abs(out @ a - b) <= ACTIVE_TOL
    outs = [project(cset, x, t) for t in targets]
    u = np.array([o.u_proj for o in outs])
    on = np.array([o.values.size > 0 and np.abs(o.values).min() <= ACTIVE_TOL for o in outs])
    return u, on


@dataclass(frozen=True)
class BoundaryHistogram:
    counts: np.ndarray
    u1_edges: np.ndarray
    u2_edges: np.ndarray
    boundary_fraction: float
    n: int

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u1_bin", "u2_bin", "count"])
        c1 = 0.5 * (self.u1_edges[1:] + self.u1_edges[:-1])
        c2 = 0.5 * (self.u2_edges[1:] + self.u2_edges[:-1])
        for i, a in enumerate(c1):
            for j, b in enumerate(c2):
                w.writerow([repr(float(a)), repr(float(b)), int(self.counts[i, j])])
        return buf.getvalue()


def boundary_mass_histogram(cset: ConstraintSet, x, sampler: Callable[[int], np.ndarray],
                            n: int, bins=40, range=((-1.5, 1.5), (-1.5, 1.5))):
    """Histogram of projected samples and the fraction landing on the boundary.

    ``sampler(n)`` returns an (n, 2) array of unprojected inputs; it owns its
    random stream.
    """
    if cset.n_input != 2:
        raise ValueError("boundary histogram is defined for 2-D inputs")
    samples = np.asarray(sampler(n), dtype=float).reshape(-1, 2) if n > 0 else np.zeros((0, 2))
    proj, on = project_many(cset, x, samples)
    counts, e1, e2 = np.histogram2d(proj[:, 0], proj[:, 1], bins=bins, range=range)
    frac = float(on.mean()) if n > 0 else float("nan")
    return BoundaryHistogram(counts.astype(int), e1, e2, frac, int(n))
