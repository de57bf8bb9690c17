"""Inequality descriptions s(x, u) <= 0 of state-dependent safe input sets.

Every supported constraint is at most quadratic in the input, so each one is
stored as a callable returning ``QuadConstraint(P, q, r)`` for a given state;
values, gradients and Hessians in ``u`` then follow exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import DimensionMismatch
from .optim import QuadConstraint

MEMBER_TOL = 1e-9

ArrayOrFn = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


def _resolve(value, x):
    return np.asarray(value(x) if callable(value) else value, dtype=float)


@dataclass(frozen=True)
class Affine:
    """G(x) u <= b(x); G and b may be constant arrays or callables of x."""

    G: ArrayOrFn
    b: ArrayOrFn
    kind = "affine"

    def forms(self, x, m):
        G = np.atleast_2d(_resolve(self.G, x))
        b = _resolve(self.b, x).reshape(-1)
        if G.shape != (b.size, m):
            raise DimensionMismatch(f"affine block G{G.shape} b{b.shape} for input dim {m}")
        zero = np.zeros((m, m))
        return [QuadConstraint(zero, G[i], -b[i]) for i in range(b.size)]

    def count(self, x, m):
        return _resolve(self.b, x).size


@dataclass(frozen=True)
class InputBall:
    """||u - c(x)||^2 <= radius^2."""

    center: ArrayOrFn
    radius: float
    kind = "input_ball"

    def forms(self, x, m):
        c = _resolve(self.center, x).reshape(-1)
        if c.size != m:
            raise DimensionMismatch(f"ball center has dim {c.size}, input dim is {m}")
        return [QuadConstraint(np.eye(m), -2.0 * c, float(c @ c - self.radius ** 2))]

    def count(self, x, m):
        return 1


@dataclass(frozen=True)
class StateNorm:
    """x'x <= radius^2; independent of the input."""

    radius: float = 1.0
    kind = "state_norm"

    def forms(self, x, m):
        x = np.asarray(x, dtype=float).reshape(-1)
        return [QuadConstraint(np.zeros((m, m)), np.zeros(m), float(x @ x - self.radius ** 2))]

    def count(self, x, m):
        return 1


Block = Union[Affine, InputBall, StateNorm]


class ConstraintSet:
    """Flat list of constraint blocks acting on an ``m``-dimensional input."""

    def __init__(self, blocks: Sequence[Block], n_input: int):
        self.blocks = tuple(blocks)
        self.n_input = int(n_input)

    @classmethod
    def affine(cls, G, b):
        G_arr = None if callable(G) else np.atleast_2d(np.asarray(G, dtype=float))
        m = G_arr.shape[1] if G_arr is not None else None
        if m is None:
            raise ValueError("use ConstraintSet([Affine(G, b)], n_input) for state-dependent G")
        return cls([Affine(G_arr, np.asarray(b, dtype=float).reshape(-1))], m)

    @classmethod
    def ball(cls, center, radius):
        if callable(center):
            raise ValueError("use ConstraintSet([InputBall(c, r)], n_input) for state-dependent centers")
        c = np.asarray(center, dtype=float).reshape(-1)
        return cls([InputBall(c, float(radius))], c.size)

    @classmethod
    def state_norm(cls, n_input, radius=1.0):
        return cls([StateNorm(float(radius))], n_input)

    @classmethod
    def composite(cls, *sets):
        m = {s.n_input for s in sets}
        if len(m) != 1:
            raise DimensionMismatch("composite members act on different input dimensions")
        return cls([b for s in sets for b in s.blocks], m.pop())

    def _check(self, u):
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.size != self.n_input:
            raise DimensionMismatch(f"input has dim {u.size}, set expects {self.n_input}")
        return u

    def forms(self, x):
        return [f for blk in self.blocks for f in blk.forms(x, self.n_input)]

    def kinds(self, x):
        return [blk.kind for blk in self.blocks for _ in range(blk.count(x, self.n_input))]

    def values(self, x, u):
        u = self._check(u)
        return np.array([f.value(u) for f in self.forms(x)])

    def jacobian(self, x, u):
        u = self._check(u)
        forms = self.forms(x)
        if not forms:
            return np.zeros((0, self.n_input))
        return np.vstack([f.gradient(u) for f in forms])

    def hessians(self, x, u=None):
        return [2.0 * f.P for f in self.forms(x)]

    def is_member(self, x, u):
        v = self.values(x, u)
        return bool(v.size == 0 or v.max() <= MEMBER_TOL)

    @property
    def all_affine(self):
        return all(blk.kind == "affine" for blk in self.blocks)


@dataclass(frozen=True)
class SafeSample:
    x: np.ndarray
    u: np.ndarray
    member: bool
    values: np.ndarray


def eval_constraints(cset: ConstraintSet, x, u):
    return cset.values(x, u)


def is_member(cset: ConstraintSet, x, u):
    return cset.is_member(x, u)


def constraint_jacobian(cset: ConstraintSet, x, u):
    return cset.jacobian(x, u)


def safe_sample(cset: ConstraintSet, x, u):
    values = cset.values(x, u)
    member = bool(values.size == 0 or values.max() <= MEMBER_TOL)
    return SafeSample(np.asarray(x, dtype=float), np.asarray(u, dtype=float), member, values)
