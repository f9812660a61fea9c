"""Control distributions and exact expectations of polynomial images.

A control draw ``u`` enters the dynamics through *control atoms*. For a box
distribution the atoms are the controls themselves; for the Dubins
(speed, heading) pair they are ``c = v cos(theta)`` and ``s = v sin(theta)``,
which keeps ``v(f(x, u))`` polynomial in (state, atoms).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .poly import DimensionError, MonomialImages, Polynomial, parse_polynomial


class ControlDistribution:
    """Probability measure on the control set, with an exact moment oracle."""

    kind: str = ""
    n_controls: int
    n_atoms: int

    def moment(self, exponents: Sequence[int]) -> float:
        exponents = tuple(int(e) for e in exponents)
        if len(exponents) != self.n_atoms:
            raise DimensionError(f"expected {self.n_atoms} exponents, got {len(exponents)}")
        if any(e < 0 for e in exponents):
            raise ValueError("negative exponent")
        return self._moment(exponents)

    def _moment(self, exponents: tuple) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def atoms(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def quadrature(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        """Tensor Gauss rule in control space: ``(atom_nodes, weights)``."""
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class UniformBox(ControlDistribution):
    bounds: tuple  # ((lo, hi), ...)
    kind: str = field(default="uniform_box", init=False)

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        for lo, hi in b:
            if not hi > lo:
                raise ValueError(f"empty control interval [{lo}, {hi}]")
        object.__setattr__(self, "bounds", b)

    @property
    def n_controls(self) -> int:
        return len(self.bounds)

    n_atoms = n_controls

    @lru_cache(maxsize=None)
    def _moment(self, exponents: tuple) -> float:
        out = 1.0
        for (a, b), k in zip(self.bounds, exponents):
            out *= (b ** (k + 1) - a ** (k + 1)) / ((k + 1) * (b - a))
        return out

    def sample(self, rng, n):
        lo = np.array([a for a, _ in self.bounds])
        hi = np.array([b for _, b in self.bounds])
        return lo + (hi - lo) * rng.random((n, len(lo)))

    def atoms(self, u):
        return np.atleast_2d(np.asarray(u, dtype=float))

    def quadrature(self, order):
        t, w = np.polynomial.legendre.leggauss(order)
        nodes_1d = []
        weights_1d = []
        for a, b in self.bounds:
            nodes_1d.append(0.5 * (b - a) * t + 0.5 * (a + b))
            weights_1d.append(0.5 * w)
        grids = np.meshgrid(*nodes_1d, indexing="ij")
        wgrids = np.meshgrid(*weights_1d, indexing="ij")
        nodes = np.column_stack([g.ravel() for g in grids])
        weights = np.prod(np.column_stack([g.ravel() for g in wgrids]), axis=1)
        return nodes, weights

    def to_json(self):
        return {"kind": "uniform_box", "bounds": [list(b) for b in self.bounds]}


def _angular_mean(a: int, b: int) -> float:
    """(1/2pi) * integral over a full turn of cos^a sin^b."""
    if a % 2 or b % 2:
        return 0.0
    num = math.prod(range(a - 1, 0, -2)) * math.prod(range(b - 1, 0, -2))
    den = math.prod(range(a + b, 0, -2))
    return num / den


@dataclass(frozen=True)
class DubinsPolar(ControlDistribution):
    """Speed uniform on ``v_range``, heading uniform on a full turn."""

    v_range: tuple = (0.0, 1.0)
    kind: str = field(default="dubins_polar", init=False)

    def __post_init__(self):
        lo, hi = (float(t) for t in self.v_range)
        if not hi > lo:
            raise ValueError(f"empty speed interval [{lo}, {hi}]")
        object.__setattr__(self, "v_range", (lo, hi))

    n_controls = 2
    n_atoms = 2

    def speed_moment(self, k: int) -> float:
        lo, hi = self.v_range
        return (hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * (hi - lo))

    @lru_cache(maxsize=None)
    def _moment(self, exponents: tuple) -> float:
        a, b = exponents
        ang = _angular_mean(a, b)
        if ang == 0.0:
            return 0.0
        return self.speed_moment(a + b) * ang

    def sample(self, rng, n):
        lo, hi = self.v_range
        v = lo + (hi - lo) * rng.random(n)
        th = -math.pi + 2 * math.pi * rng.random(n)
        return np.column_stack([v, th])

    def atoms(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return np.column_stack([u[:, 0] * np.cos(u[:, 1]), u[:, 0] * np.sin(u[:, 1])])

    def quadrature(self, order):
        lo, hi = self.v_range
        t, w = np.polynomial.legendre.leggauss(order)
        v = 0.5 * (hi - lo) * t + 0.5 * (hi + lo)
        wv = 0.5 * w
        # equally spaced nodes integrate trig polynomials of degree < n_theta exactly
        n_theta = 2 * order + 2
        th = -math.pi + 2 * math.pi * (np.arange(n_theta) + 0.5) / n_theta
        V, TH = np.meshgrid(v, th, indexing="ij")
        W = np.outer(wv, np.full(n_theta, 1.0 / n_theta))
        nodes = np.column_stack([(V * np.cos(TH)).ravel(), (V * np.sin(TH)).ravel()])
        return nodes, W.ravel()

    def to_json(self):
        return {"kind": "dubins_polar", "v": list(self.v_range)}


def distribution_from_json(data: dict) -> ControlDistribution:
    kind = data.get("kind")
    if kind == "uniform_box":
        return UniformBox(tuple(tuple(b) for b in data["bounds"]))
    if kind == "dubins_polar":
        return DubinsPolar(tuple(data.get("v", (0.0, 1.0))))
    raise ValueError(f"unknown control distribution kind {kind!r}")


@dataclass(frozen=True)
class DynamicsSpec:
    """``x' = f(x, atoms)``; components are polynomials in state then atom variables."""

    n_state: int
    n_atoms: int
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != self.n_state:
            raise DimensionError(f"need {self.n_state} components, got {len(comps)}")
        for p in comps:
            if p.n_vars != self.n_state + self.n_atoms:
                raise DimensionError("dynamics component over the wrong variable count")
        object.__setattr__(self, "components", comps)

    @classmethod
    def parse(cls, texts: Sequence[str], n_state: int, n_atoms: int) -> DynamicsSpec:
        names = [f"x{i}" for i in range(n_state)] + [f"u{i}" for i in range(n_atoms)]
        return cls(n_state, n_atoms, tuple(parse_polynomial(t, names=names) for t in texts))

    def to_strings(self) -> list[str]:
        names = [f"x{i}" for i in range(self.n_state)] + [f"u{i}" for i in range(self.n_atoms)]
        return [p.to_string(names) for p in self.components]

    def evaluate(self, x: Sequence[float], atoms: Sequence[float]) -> np.ndarray:
        z = np.concatenate([np.asarray(x, dtype=float), np.asarray(atoms, dtype=float)])
        return np.array([p.evaluate(z) for p in self.components])

    def evaluate_many(self, X: np.ndarray, A: np.ndarray) -> np.ndarray:
        """Next states for paired rows of states ``X`` and atoms ``A``."""
        Z = np.hstack([np.atleast_2d(X), np.atleast_2d(A)])
        return np.column_stack([p.evaluate_many(Z) for p in self.components])

    def is_control_free(self) -> bool:
        return all(not any(m[self.n_state:]) for p in self.components for m in p.monomials())


def dubins_dynamics(scale: float = 1.0) -> DynamicsSpec:
    """Euler Dubins car ``x' = x + c/scale, y' = y + s/scale`` in atom form."""
    x, y, c, s = Polynomial.variables(4)
    return DynamicsSpec(2, 2, (x + c / scale, y + s / scale))


def take_expectation(p: Polynomial, n_state: int, dist: ControlDistribution) -> Polynomial:
    """Integrate the atom variables of ``p`` out against ``dist``."""
    if p.n_vars != n_state + dist.n_atoms:
        raise DimensionError("polynomial is not over (state, atoms)")
    out: dict = {}
    for m, c in p.items():
        mom = dist.moment(m[n_state:])
        if mom != 0.0:
            key = m[:n_state]
            out[key] = out.get(key, 0.0) + c * mom
    return Polynomial(n_state, out)


def expected_step(v: Polynomial, f: DynamicsSpec, dist: ControlDistribution) -> Polynomial:
    """``x -> E[v(f(x, u))]`` as a polynomial in the state alone."""
    if v.n_vars != f.n_state:
        raise DimensionError(f"v has {v.n_vars} variables, dynamics have {f.n_state} states")
    if f.n_atoms != dist.n_atoms:
        raise DimensionError("dynamics and distribution disagree on the control atoms")
    return take_expectation(v.compose(f.components), f.n_state, dist)


class ExpectedImages:
    """Memoised ``E[m(f(x, u))]`` for many monomials ``m`` sharing one ``f``."""

    def __init__(self, f: DynamicsSpec, dist: ControlDistribution):
        if f.n_atoms != dist.n_atoms:
            raise DimensionError("dynamics and distribution disagree on the control atoms")
        self.f = f
        self.dist = dist
        self._images = MonomialImages(f.components)
        self._memo: dict = {}

    def __call__(self, m) -> Polynomial:
        m = tuple(m)
        if m not in self._memo:
            self._memo[m] = take_expectation(self._images.image(m), self.f.n_state, self.dist)
        return self._memo[m]
