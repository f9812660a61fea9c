"""Sampling-based reach-avoid controller and a line-of-sight reference."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .crs import Certificate
from .expectation import ControlDistribution, DynamicsSpec
from .poly import SemiAlgebraicSet


class ViabilityLost(RuntimeError):
    def __init__(self, v_x: float, best_v: float, n_tried: int):
        super().__init__(f"viability lost: v(x) = {v_x:.6g}, best v(f(x,u)) = {best_v:.6g} over {n_tried} samples")
        self.v_x = v_x
        self.best_v = best_v
        self.n_tried = n_tried


@dataclass
class ControllerParams:
    N: int = 100
    p_omega: float = 0.0
    rng_seed: int = 0
    fallback_growth: int = 10
    fallback_rounds: int = 3

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.p_omega < 0:
            raise ValueError("p_omega must be non-negative")


def distance_to_target(x: Sequence[float], X_r: SemiAlgebraicSet) -> float:
    """Euclidean distance for ball targets; clamped max-constraint surrogate otherwise."""
    x = np.asarray(x, dtype=float)
    b = X_r.as_ball()
    if b is not None:
        c, r = b
        return max(0.0, float(np.linalg.norm(x - c)) - r)
    return max(0.0, float(max(p.evaluate(x) for p in X_r.constraints)))


def _distances(Y: np.ndarray, X_r: SemiAlgebraicSet) -> np.ndarray:
    b = X_r.as_ball()
    if b is not None:
        c, r = b
        return np.maximum(0.0, np.linalg.norm(Y - c, axis=1) - r)
    return np.maximum(0.0, X_r.values(Y).max(axis=1))


@dataclass
class StepResult:
    u: np.ndarray  # raw control
    atoms: np.ndarray
    next_state: np.ndarray
    v_next: float
    n_feasible: int
    n_drawn: int


def synthesize_step(x: Sequence[float], cert: Certificate, f: DynamicsSpec, dist: ControlDistribution,
                    X_r: SemiAlgebraicSet, C: SemiAlgebraicSet, params: ControllerParams,
                    u_ref: Sequence[float] | None = None, rng: np.random.Generator | None = None,
                    length_scale: float = 1.0) -> StepResult:
    """Pick a control keeping the next state certified, nearest the target.

    Candidates are i.i.d. draws from ``dist``. A candidate is kept when the
    next state has ``v > 0`` and lies in C; among those the cost
    ``dist(next, X_r) + p_omega * |atoms(u) - atoms(u_ref)|`` is minimised,
    ties going to the lowest sample index. ``length_scale`` converts state
    distances to the units the weight ``p_omega`` was tuned in.
    """
    x = np.asarray(x, dtype=float)
    if rng is None:
        rng = np.random.default_rng(params.rng_seed)
    ref = None if u_ref is None else dist.atoms(np.asarray(u_ref, dtype=float))[0]
    n = params.N
    best_v = -math.inf
    tried = 0
    for _ in range(params.fallback_rounds + 1):
        U = dist.sample(rng, n)
        A = dist.atoms(U)
        Y = f.evaluate_many(np.tile(x, (n, 1)), A)
        v = cert.v.evaluate_many(Y)
        tried += n
        best_v = max(best_v, float(v.max()))
        ok = (v > 0.0) & C.contains_many(Y)
        if np.any(ok):
            cost = length_scale * _distances(Y, X_r)
            if ref is not None and params.p_omega > 0:
                cost = cost + params.p_omega * np.linalg.norm(A - ref, axis=1)
            cost = np.where(ok, cost, np.inf)
            i = int(np.argmin(cost))  # first index on ties
            return StepResult(U[i], A[i], Y[i], float(v[i]), int(ok.sum()), tried)
        n *= params.fallback_growth
    raise ViabilityLost(cert.value(x), best_v, tried)


@dataclass
class LineOfSight:
    """Waypoint follower steering toward a lookahead point on the current leg."""

    waypoints: list
    acceptance_radius: float = 2.0
    lookahead: float = 5.0
    speed: float = 1.0
    start: Sequence[float] | None = None
    active: int = 0
    _prev: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("empty waypoint path")
        self.waypoints = [np.asarray(w, dtype=float) for w in self.waypoints]
        if self.start is not None:
            self._prev = np.asarray(self.start, dtype=float)

    def lookahead_point(self, p: np.ndarray) -> np.ndarray:
        w = self.waypoints[self.active]
        a = self._prev if self._prev is not None else p
        seg = w - a
        L = float(np.linalg.norm(seg))
        if L < 1e-12:
            return w
        t = float(np.clip(np.dot(p - a, seg) / L, 0.0, L))
        return a + seg * min(L, t + self.lookahead) / L

    def reference(self, x: Sequence[float]) -> np.ndarray:
        """Raw Dubins control ``(speed, heading)`` toward the lookahead point."""
        p = np.asarray(x, dtype=float)[:2]
        while (self.active < len(self.waypoints) - 1
               and np.linalg.norm(p - self.waypoints[self.active]) <= self.acceptance_radius):
            self._prev = self.waypoints[self.active]
            self.active += 1
        q = self.lookahead_point(p)
        d = q - p
        return np.array([self.speed, math.atan2(d[1], d[0])])


def los_reference(x: Sequence[float], guide: LineOfSight) -> np.ndarray:
    return guide.reference(x)
