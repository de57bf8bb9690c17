"""Simulated plant, bounded noise, rollouts and Monte-Carlo returns.

Random streams are keyed by (seed, episode): each episode owns one generator
for policy sampling and one for plant noise, so episodes can be run in any
order and a change of policy never shifts the noise sequence.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .policy import GaussianPolicy, sample_action
from .projection import project
from .safe_set import ConstraintSet
from .tube_mpc import StageCost, TubeMpcProblem, plan_within_tube, rotation, solve_projection_mpc

TRANSITION_HEADER = ["episode", "t", "x1", "x2", "us1", "us2", "u1", "u2", "cost", "x1next", "x2next"]


def sample_truncated_normal_ball(rng: np.random.Generator, size, variance=0.1, radius=0.1, dim=2):
    """Draws of N(0, variance I) conditioned on ||n|| <= radius, via the radial CDF.

    In 2-D the radius is Rayleigh distributed; truncating it at ``radius`` and
    inverting gives r = sqrt(-2 v log(1 - U (1 - exp(-radius^2 / 2v)))).
    """
    if dim != 2:
        raise ValueError("the radial sampler is implemented for two dimensions")
    size = int(size)
    u = rng.random(size)
    angle = rng.uniform(0.0, 2.0 * np.pi, size)
    mass = -np.expm1(-radius ** 2 / (2.0 * variance))
    r = np.sqrt(-2.0 * variance * np.log1p(-u * mass))
    r = np.minimum(r, radius)
    return np.column_stack([r * np.cos(angle), r * np.sin(angle)])


def sample_truncated_normal_rejection(rng: np.random.Generator, size, variance=0.1, radius=0.1, dim=2):
    """Same distribution by plain rejection; slow, kept to cross-check the radial sampler."""
    out = np.empty((0, dim))
    sd = np.sqrt(variance)
    while out.shape[0] < size:
        draws = sd * rng.standard_normal((4 * (size - out.shape[0]) + 64, dim))
        out = np.vstack([out, draws[np.sum(draws ** 2, axis=1) <= radius ** 2]])
    return out[:size]


@dataclass(frozen=True)
class PlantModel:
    """x+ = R(a) x + u + n with n truncated normal in a ball."""

    cost: StageCost
    angle_deg: float = 20.0
    noise_variance: float = 0.1
    noise_radius: float = 0.1
    noise: bool = True

    @property
    def A(self):
        return rotation(self.angle_deg)

    def draw_noise(self, rng):
        if not self.noise:
            return np.zeros(2)
        return sample_truncated_normal_ball(rng, 1, self.noise_variance, self.noise_radius)[0]


def step(plant: PlantModel, x, u, rng: np.random.Generator):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    x_next = plant.A @ x + u + plant.draw_noise(rng)
    return x_next, plant.cost(x, u)


@dataclass(frozen=True)
class Transition:
    episode: int
    t: int
    x: np.ndarray
    u_s: np.ndarray
    u: np.ndarray
    cost: float
    x_next: np.ndarray
    plan_ok: bool = True


@dataclass(frozen=True)
class Composition:
    """A policy, an optional safety filter and the sampling mode.

    ``safety`` is None (raw), a ConstraintSet (Euclidean projection) or a
    TubeMpcProblem (first input of the projection MPC).
    """

    policy: GaussianPolicy
    safety: object = None
    stochastic: bool = True

    def act(self, x, rng):
        u_s = sample_action(self.policy, x, rng) if self.stochastic else self.policy.mean(x)
        if self.safety is None:
            return u_s, u_s, True
        if isinstance(self.safety, ConstraintSet):
            return u_s, project(self.safety, x, u_s).u_proj, True
        if isinstance(self.safety, TubeMpcProblem):
            sol = solve_projection_mpc(self.safety, x, u_s)
            return u_s, sol.u0.copy(), plan_within_tube(self.safety, sol)
        raise TypeError(f"unsupported safety filter {type(self.safety).__name__}")


def episode_streams(seed, episode):
    """(policy stream, noise stream) for one episode."""
    policy_rng, noise_rng = np.random.default_rng([int(seed), int(episode)]).spawn(2)
    return policy_rng, noise_rng


def rollout(plant: PlantModel, comp: Composition, x0, length, seed, episode=0) -> List[Transition]:
    policy_rng, noise_rng = episode_streams(seed, episode)
    x = np.asarray(x0, dtype=float).copy()
    out = []
    for t in range(int(length)):
        u_s, u, ok = comp.act(x, policy_rng)
        x_next, cost = step(plant, x, u, noise_rng)
        out.append(Transition(episode, t, x, u_s, u, cost, x_next, ok))
        x = x_next
    return out


def rollout_batch(plant, comp, x0, length, seed, episodes, first_episode=0):
    """Episodes first_episode..first_episode+episodes-1, ordered by index."""
    return [rollout(plant, comp, x0, length, seed, e)
            for e in range(first_episode, first_episode + int(episodes))]


def stack_transitions(transitions):
    ts = list(transitions)
    return {
        "x": np.array([t.x for t in ts]).reshape(len(ts), -1),
        "u_s": np.array([t.u_s for t in ts]).reshape(len(ts), -1),
        "u": np.array([t.u for t in ts]).reshape(len(ts), -1),
        "cost": np.array([t.cost for t in ts]),
        "x_next": np.array([t.x_next for t in ts]).reshape(len(ts), -1),
    }


def transitions_to_csv(transitions) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRANSITION_HEADER)
    for t in transitions:
        w.writerow([t.episode, t.t, *map(repr, map(float, t.x)), *map(repr, map(float, t.u_s)),
                    *map(repr, map(float, t.u)), repr(float(t.cost)), *map(repr, map(float, t.x_next))])
    return buf.getvalue()


@dataclass(frozen=True)
class ReturnEstimate:
    mean: float
    stderr: float
    tail_bound: float
    episodes: int
    returns: np.ndarray = field(repr=False)
    max_state_norm_sq: float = 0.0


def discounted_return(costs, gamma):
    costs = np.asarray(costs, dtype=float)
    return float(np.sum(costs * gamma ** np.arange(costs.size)))


def evaluate_return(plant: PlantModel, comp: Composition, x0, gamma, horizon=200, episodes=10,
                    seed=0) -> ReturnEstimate:
    """Truncated discounted cost averaged over episodes.

    ``tail_bound`` is gamma^T max L / (1 - gamma) with max L the largest stage
    cost seen; it bounds the truncation error only if costs stay at that level.
    """
    if episodes < 1:
        raise ValueError("need at least one episode")
    returns, worst, sq = [], 0.0, 0.0
    for e in range(int(episodes)):
        traj = rollout(plant, comp, x0, horizon, seed, e)
        costs = [t.cost for t in traj]
        returns.append(discounted_return(costs, gamma))
        if costs:
            worst = max(worst, max(costs))
            sq = max(sq, max(float(t.x_next @ t.x_next) for t in traj))
    returns = np.array(returns)
    se = float(returns.std(ddof=1) / np.sqrt(returns.size)) if returns.size > 1 else float("nan")
    tail = float(gamma ** horizon * worst / (1.0 - gamma))
    return ReturnEstimate(float(returns.mean()), se, tail, int(episodes), returns, sq)
