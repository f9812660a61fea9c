import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachcert.safeset import (SAFE, UNSAFE, LabeledSample, SensorScan, SvmError, SvmModel, as_arrays,
                               decision_polynomial, generate_labels, learned_safe_set, train_svm)


def clear_scan(n=8, D=80.0, origin=(0.0, 0.0)):
    return SensorScan(origin, 2 * np.pi * np.arange(n) / n, np.full(n, np.inf), D)


def test_scan_validation():
    with pytest.raises(ValueError, match="at least"):
        SensorScan((0, 0), np.zeros(4), np.ones(4), 80)
    with pytest.raises(ValueError, match="empty"):
        SensorScan((0, 0), [], [], 80)
    with pytest.raises(ValueError, match="positive"):
        SensorScan((0, 0), np.zeros(8), np.zeros(8), 80)
    with pytest.raises(ValueError, match="length"):
        SensorScan((0, 0), np.zeros(8), np.ones(9), 80)


def test_scan_csv_roundtrip(tmp_path):
    s = clear_scan(16)
    s.hit_distance[3] = 12.5
    p = tmp_path / "scan.csv"
    s.to_csv(p)
    back = SensorScan.from_csv(p, max_range=80.0)
    assert np.array_equal(back.ray_angles, s.ray_angles) and np.array_equal(back.hit_distance, s.hit_distance)
    p.write_text("angle,distance\n0.0,1.0\n0.5,abc\n")
    with pytest.raises(ValueError, match=":3:"):
        SensorScan.from_csv(p, 80.0)
    p.write_text("a,b\n")
    with pytest.raises(ValueError, match="header"):
        SensorScan.from_csv(p, 80.0)


def test_labels_clear_scan():
    S = generate_labels(clear_scan(8), 8.0)
    X, y = as_arrays(S)
    r = np.linalg.norm(X, axis=1)
    assert len(S) == 17
    assert S[0] == LabeledSample((0.0, 0.0), SAFE)
    assert np.allclose(r[y == SAFE][1:], 80.0) and (y == SAFE).sum() == 9
    assert np.allclose(r[y == UNSAFE], 88.0) and (y == UNSAFE).sum() == 8


def test_labels_single_hit():
    s = clear_scan(8)
    s.hit_distance[0] = 10.0
    S = generate_labels(s, 8.0)
    on_ray = [(smp.x[0], smp.y) for smp in S if abs(smp.x[1]) < 1e-12 and smp.x[0] > 0]
    assert (10.0, UNSAFE) in on_ray
    safe_r = [x for x, lab in on_ray if lab == SAFE]
    assert safe_r and all(0 < r < 10 for r in safe_r)


def test_labels_errors():
    with pytest.raises(ValueError):
        generate_labels(clear_scan(), 0.0)


@settings(max_examples=25)
@given(st.floats(-math.pi, math.pi), st.lists(st.floats(1.0, 100.0), min_size=8, max_size=12))
def test_labels_rotation_equivariant(phi, dists):
    n = len(dists)
    ang = 2 * np.pi * np.arange(n) / n
    a = generate_labels(SensorScan((0, 0), ang, dists, 80.0), 8.0)
    b = generate_labels(SensorScan((0, 0), ang + phi, dists, 80.0), 8.0)
    R = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
    Xa, ya = as_arrays(a)
    Xb, yb = as_arrays(b)
    assert np.array_equal(ya, yb)
    assert np.allclose(Xa @ R.T, Xb, atol=1e-9)


def samples(X, y):
    return [LabeledSample(tuple(map(float, x)), int(l)) for x, l in zip(X, y)]


def test_two_point_linear_svm():
    m = train_svm(samples([[-1.0, 0.0], [1.0, 0.0]], [-1, 1]), c_plus=10.0, c_minus=10.0, degree=1)
    d = m.decision(np.array([[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 3.0]]))
    assert np.allclose(d, [-1.0, 0.0, 1.0, 0.0], atol=1e-3)


def test_xor_degree2():
    X = [[1, 1], [-1, -1], [1, -1], [-1, 1]]
    m = train_svm(samples(X, [1, 1, -1, -1]), c_plus=10.0, c_minus=10.0, degree=2)
    assert np.array_equal(np.sign(m.decision(np.array(X, float))), [1, 1, -1, -1])


def noisy_set(seed=0, n=80):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    y = np.where(np.linalg.norm(X, axis=1) < 0.6, 1, -1)
    flip = rng.choice(n, 6, replace=False)
    y[flip] = -y[flip]  # label noise in both directions
    return X, y


def test_biased_penalty_protects_unsafe():
    X, y = noisy_set()
    m = train_svm(samples(X, y), c_plus=1.0, c_minus=1e12, degree=4)
    d = m.decision(X)
    assert np.all(d[y < 0] < 0)
    assert np.any(d[y > 0] < 0)  # some safe points are given up


@pytest.mark.parametrize("seed", range(10))
def test_dual_monotone_and_kkt(seed):
    X, y = noisy_set(seed, 40)
    m = train_svm(samples(X, y), c_plus=10.0, c_minus=1e12, degree=4)
    h = np.array(m.objective_history)
    assert len(h) >= 2 and np.all(np.diff(h) >= -1e-9 * np.maximum(1.0, np.abs(h[1:])))
    assert m.kkt_violation <= 1e-3


def test_iteration_cap():
    X, y = noisy_set(1, 60)
    with pytest.raises(SvmError, match="violation"):
        train_svm(samples(X, y), c_plus=10.0, c_minus=1e12, degree=6, max_iter=3)


def test_single_class_rejected():
    with pytest.raises(SvmError, match="both classes"):
        train_svm(samples([[0, 0], [1, 1]], [1, 1]))


def test_origin_support_vector():
    m = SvmModel(support=np.zeros((1, 2)), coef=np.array([1.0]), b=0.0, degree=2, center=np.zeros(2), scale=1.0,
                 c_plus=1.0, c_minus=1.0)
    h, S = decision_polynomial(m)
    assert h.is_zero()


def test_expansion_matches_kernel():
    X, y = noisy_set(3)
    m = train_svm(samples(X * 30 + 50, y), c_plus=10.0, c_minus=1e12, degree=6)
    h, S = decision_polynomial(m)
    P = np.random.default_rng(0).uniform(20, 80, size=(100, 2))
    Z = m.normalize(P)
    dec = m.decision(P)
    assert np.abs(h.evaluate_many(Z) - (1 - dec)).max() <= 1e-8
    assert np.array_equal(S.contains_many(Z), h.evaluate_many(Z) <= 0)
    assert np.array_equal(h.evaluate_many(Z) <= 0, 1 - dec <= 0) or np.abs(1 - dec).min() < 1e-8
    assert h.degree() == 6


def test_model_json(tmp_path):
    X, y = noisy_set(4, 30)
    m = train_svm(samples(X, y), degree=3)
    p = tmp_path / "m.json"
    m.save(p)
    back = SvmModel.load(p)
    P = np.random.default_rng(1).uniform(-1, 1, size=(20, 2))
    assert np.array_equal(back.decision(P), m.decision(P))
    d = json.loads(p.read_text())
    d["kernel"]["kind"] = "rbf"
    with pytest.raises(ValueError):
        SvmModel.from_json(d)


def test_learned_set_frame():
    X, y = noisy_set(5)
    m = train_svm(samples(X * 20 + 100, y), c_plus=10.0, c_minus=1e12, degree=4)
    origin, R = np.array([100.0, 100.0]), 20.0
    C = learned_safe_set(m, origin, R)
    P = np.random.default_rng(2).uniform(80, 120, size=(200, 2))
    xi = (P - origin) / R
    expect = (m.decision(P) >= 1) & (np.linalg.norm(xi, axis=1) <= 1)
    got = C.contains_many(xi)
    margin = np.abs(m.decision(P) - 1) > 1e-7
    assert np.array_equal(got[margin], expect[margin])
    assert np.allclose(C.bounding_box(), [[-1, 1], [-1, 1]])
