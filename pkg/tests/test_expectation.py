import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from reachcert.expectation import (DubinsPolar, DynamicsSpec, UniformBox, distribution_from_json, dubins_dynamics,
                                   expected_step, take_expectation)
from reachcert.poly import DimensionError, Polynomial, basis, compose


def test_uniform_moments():
    d = UniformBox(((-1.0, 1.0),))
    assert d.moment([1]) == 0.0
    oracle = integrate.quad(lambda u: u**2 / 2, -1, 1)[0]
    assert abs(d.moment([2]) - oracle) < 1e-14
    assert abs(oracle - 1 / 3) < 1e-14


def test_dubins_moment_quadrature():
    d = DubinsPolar((0.0, 1.0))
    oracle = integrate.dblquad(lambda th, v: (v * math.cos(th)) ** 2 / (2 * math.pi), 0, 1, -math.pi, math.pi)[0]
    assert abs(d.moment([2, 0]) - oracle) < 1e-12
    assert abs(oracle - 1 / 6) < 1e-12


@pytest.mark.parametrize("dist", [UniformBox(((-1, 1),)), UniformBox(((-0.1, 0.3), (2, 5))), DubinsPolar((0, 1)),
                                  DubinsPolar((0.5, 2))])
def test_normalization(dist):
    assert dist.moment([0] * dist.n_atoms) == 1.0


@given(st.integers(0, 9), st.integers(0, 9))
def test_dubins_odd_moments_vanish(a, b):
    if a % 2 or b % 2:
        assert DubinsPolar((0.2, 1.3)).moment([a, b]) == 0.0


def test_negative_exponent():
    with pytest.raises(ValueError):
        UniformBox(((-1, 1),)).moment([-1])
    with pytest.raises(DimensionError):
        UniformBox(((-1, 1),)).moment([1, 1])


@pytest.mark.parametrize("dist", [UniformBox(((-1, 2), (0, 1))), DubinsPolar((0.2, 1.0))])
def test_quadrature_integrates_moments(dist):
    nodes, w = dist.quadrature(5)
    assert abs(w.sum() - 1) < 1e-12
    for e in itertools.product(range(5), repeat=2):
        assert abs(w @ np.prod(nodes ** np.array(e), axis=1) - dist.moment(e)) < 1e-12


def test_control_free_dynamics():
    f = DynamicsSpec.parse(["0.5*x0 + x1^2", "x0*x1"], 2, 1)
    v = Polynomial(2, {m: 1.0 + i for i, m in enumerate(basis(2, 3))})
    assert f.is_control_free()
    assert expected_step(v, f, UniformBox(((-1, 1),))) == compose(v, list(f.components)).restrict(2)


def test_linear_and_square():
    f = DynamicsSpec.parse(["x0 + u0"], 1, 1)
    d = UniformBox(((-1, 1),))
    t = Polynomial.variable(1, 0)
    assert expected_step(t, f, d) == t
    e2 = expected_step(t**2, f, d)
    assert e2.allclose(t**2 + 1 / 3, atol=1e-15)
    # Monte-Carlo check
    u = np.random.default_rng(1).uniform(-1, 1, 10**6)
    for x in (-0.7, 0.0, 0.4):
        assert abs(np.mean(x + u) - expected_step(t, f, d).evaluate([x])) < 1e-3
        assert abs(np.mean((x + u) ** 2) - e2.evaluate([x])) < 1e-3


def test_take_expectation_removes_controls():
    p = Polynomial(3, {(1, 0, 2): 3.0, (0, 1, 1): 1.0})
    q = take_expectation(p, 2, UniformBox(((-1, 1),)))
    assert q.n_vars == 2 and q == Polynomial(2, {(1, 0): 1.0})


def test_distribution_json():
    for d in (UniformBox(((-1, 1),)), DubinsPolar((0, 1))):
        assert distribution_from_json(d.to_json()) == d
    assert distribution_from_json({"kind": "dubins_polar", "v": [0, 1]}).n_atoms == 2
    with pytest.raises(ValueError):
        distribution_from_json({"kind": "gaussian"})


def test_dynamics_dimension_checks():
    with pytest.raises(DimensionError):
        DynamicsSpec(2, 1, (Polynomial.variable(3, 0),))
    with pytest.raises(DimensionError):
        DynamicsSpec(1, 1, (Polynomial.variable(3, 0),))


def _mc_oracle(v, f, dist, X, n_draws=10**6, seed=7):
    """Monte-Carlo mean and standard error of v(f(x,u)) at rows of X.

    Each v(f(x, .)) is a polynomial in the control atoms, so its sample mean over
    the draws equals the fitted atom coefficients dotted with the sample power
    sums. The fit uses only direct evaluation of v and f.
    """
    rng = np.random.default_rng(seed)
    A = dist.atoms(dist.sample(rng, n_draws))
    k = dist.n_atoms
    deg = v.degree() * max(max((sum(m[f.n_state:]) for m in c.monomials()), default=0) for c in f.components)
    monos = [m for m in itertools.product(range(deg + 1), repeat=k) if sum(m) <= deg]
    monos2 = [m for m in itertools.product(range(2 * deg + 1), repeat=k) if sum(m) <= 2 * deg]
    idx2 = {m: i for i, m in enumerate(monos2)}
    mom = np.array([np.mean(np.prod(A ** np.array(m), axis=1)) for m in monos2])
    fit_pts = dist.atoms(dist.sample(rng, 4 * len(monos)))
    V = np.column_stack([np.prod(fit_pts ** np.array(m), axis=1) for m in monos])
    out = []
    for x in X:
        w = v.evaluate_many(f.evaluate_many(np.tile(x, (len(fit_pts), 1)), fit_pts))
        c = np.linalg.lstsq(V, w, rcond=None)[0]
        mean = sum(ci * mom[idx2[m]] for ci, m in zip(c, monos))
        second = sum(ci * cj * mom[idx2[tuple(a + b for a, b in zip(mi, mj))]]
                     for ci, mi in zip(c, monos) for cj, mj in zip(c, monos))
        out.append((mean, math.sqrt(max(second - mean**2, 0.0) / n_draws)))
    return np.array(out)


@pytest.mark.parametrize("name", ["example2", "example3", "example4", "dubins"])
def test_expected_step_matches_monte_carlo(name, scenarios):
    if name == "dubins":
        f, dist = dubins_dynamics(40.0), DubinsPolar((0.0, 1.0))
    else:
        f, dist = scenarios[name].dynamics, scenarios[name].dist
    rng = np.random.default_rng(3)
    v = Polynomial(2, {m: float(rng.normal()) for m in basis(2, 4)})
    X = rng.uniform(-1, 1, size=(100, 2))
    E = expected_step(v, f, dist).evaluate_many(X)
    mc = _mc_oracle(v, f, dist, X)
    # 3 standard errors, with a rounding floor for states where the variance vanishes
    assert np.all(np.abs(E - mc[:, 0]) <= 3 * mc[:, 1] + 1e-10)


def test_mc_oracle_agrees_with_brute_force():
    f, dist = DynamicsSpec.parse(["x0 + x1*u0", "x1 - u0^2"], 2, 1), UniformBox(((-1, 1),))
    v = Polynomial(2, {m: 1.0 for m in basis(2, 3)})
    x = np.array([[0.3, -0.2]])
    rng = np.random.default_rng(7)
    A = dist.atoms(dist.sample(rng, 10**6))
    brute = v.evaluate_many(f.evaluate_many(np.tile(x[0], (10**6, 1)), A)).mean()
    assert abs(_mc_oracle(v, f, dist, x)[0, 0] - brute) < 1e-9
