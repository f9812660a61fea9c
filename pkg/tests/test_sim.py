import math

import numpy as np
import pytest

from reachcert.control import ControllerParams
from reachcert.expectation import DubinsPolar, dubins_dynamics
from reachcert.poly import SemiAlgebraicSet, ball
from reachcert.sim import (HIT, MAX_STEPS, SAFETY_VIOLATION, Environment, MissionConfig, MissionError, Scenario,
                           Trajectory, default_max_steps, intrusions, lidar_scan, render_svg, run_episode, run_mission,
                           run_reference, step)
from reachcert.crs import hitting_bounds


def test_step_examples(scenarios):
    sc2, sc4 = scenarios["example2"], scenarios["example4"]
    assert np.allclose(step(sc2.dynamics, sc2.dist, [0.0, 0.0], [0.0]), [0.0, 0.01], atol=1e-15)
    assert np.array_equal(step(sc4.dynamics, sc4.dist, [0.0, 0.0], [0.0]), [0.0, 0.0])
    d = DubinsPolar((0.0, 1.0))
    assert np.array_equal(step(dubins_dynamics(1.0), d, [3.0, 4.0], [0.0, 1.2]), [3.0, 4.0])
    with pytest.raises(ValueError):
        step(sc2.dynamics, sc2.dist, [0.0], [0.0])
    with pytest.raises(ValueError):
        step(sc2.dynamics, sc2.dist, [0.0, 0.0], [0.0, 1.0])


def test_environment_validation_and_json():
    with pytest.raises(ValueError):
        Environment(10, 10, rects=[(5, 5, 12, 6)])
    with pytest.raises(ValueError):
        Environment(10, 10, discs=[(1, 5, 2)])
    env = Environment(50, 20, rects=[(1, 1, 3, 4)], discs=[(10, 10, 2)])
    assert Environment.from_json(env.to_json()) == env
    assert env.in_obstacle([2, 2]) and env.in_obstacle([10, 11.5]) and not env.in_obstacle([20, 10])
    assert env.intrudes([-1, 5]) and not env.intrudes([20, 10])
    with pytest.raises(ValueError):
        Environment.from_json({"width": 5, "height": 5, "obstacles": [{"cone": [1]}]})


def test_scan_empty_scene():
    s = lidar_scan(Environment(400, 400), (200, 200), n_rays=64, D=80.0)
    assert len(s.ray_angles) == 64 and np.all(np.isinf(s.hit_distance))
    assert np.allclose(s.ray_angles, 2 * np.pi * np.arange(64) / 64)


def test_scan_disc_ahead():
    s = lidar_scan(Environment(100, 100, discs=[(60, 50, 2)]), (50, 50), n_rays=8, D=80.0)
    assert abs(s.hit_distance[0] - 8.0) < 1e-12


def test_scan_rect_and_walls():
    s = lidar_scan(Environment(100, 100, rects=[(40, 45, 45, 55)]), (50, 50), n_rays=8, D=80.0)
    assert abs(s.hit_distance[4] - 5.0) < 1e-12  # rect face to the west
    assert abs(s.hit_distance[0] - 50.0) < 1e-12  # east wall
    assert abs(s.hit_distance[1] - 50 * math.sqrt(2)) < 1e-9


def test_scan_order_invariant():
    rects, discs = [(10, 10, 20, 20), (60, 5, 70, 40)], [(30, 70, 5), (80, 80, 4), (45, 20, 3)]
    a = lidar_scan(Environment(100, 100, rects, discs), (50, 50))
    b = lidar_scan(Environment(100, 100, rects[::-1], discs[::-1]), (50, 50))
    assert np.array_equal(a.hit_distance, b.hit_distance)


def test_scan_origin_in_obstacle():
    with pytest.raises(ValueError):
        lidar_scan(Environment(100, 100, discs=[(50, 50, 3)]), (50, 51))


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        Trajectory([np.zeros(2)], [np.zeros(1)], [1.0], HIT)
    t = Trajectory([np.zeros(2), np.ones(2)], [np.array([0.5])], [1.0, 2.0], HIT, hit_time=1)
    lines = t.csv_text().splitlines()
    assert lines[0] == "step,x0,x1,u0,v"
    assert lines[2] == "1,1.0,1.0,,2.0"


def test_episode_example2(certificates, scenarios):
    sc, cert = scenarios["example2"], certificates["example2"]
    tr = run_episode(sc, cert, sc.targets[0], seed=0)
    T, _ = hitting_bounds(cert, sc.x0)
    assert tr.outcome == HIT and tr.hit_time <= math.ceil(T)
    assert sc.targets[0].contains(tr.states[-1])
    assert all(v > 0 for v in tr.v[:-1]) and all(sc.C.contains(s) for s in tr.states[:-1])
    assert default_max_steps(cert, sc.x0) == 2 * math.ceil(T)


def test_episode_example3(certificates, scenarios):
    sc, cert = scenarios["example3"], certificates["example3"]
    tr = run_episode(sc, cert, sc.targets[0], seed=1)
    assert tr.outcome == HIT and tr.hit_time <= hitting_bounds(cert, sc.x0)[0]


def test_episode_start_in_target(certificates, scenarios):
    sc, cert = scenarios["example2"], certificates["example2"]
    tr = run_episode(sc, cert, sc.targets[0], x0=[0.0, 0.5])
    assert tr.outcome == HIT and tr.hit_time == 0 and tr.n_steps == 0


def test_episode_max_steps(certificates, scenarios):
    sc, cert = scenarios["example2"], certificates["example2"]
    tr = run_episode(sc, cert, sc.targets[0], max_steps=3)
    assert tr.outcome == MAX_STEPS and tr.n_steps == 3


def test_episode_start_outside_omega(certificates, scenarios):
    sc, cert = scenarios["example2"], certificates["example2"]
    tr = run_episode(sc, cert, sc.targets[0], x0=[0.99, 0.0], max_steps=10)
    assert cert.value([0.99, 0.0]) <= 0 and tr.outcome == SAFETY_VIOLATION


def test_episode_csv_reproducible(certificates, scenarios):
    sc, cert = scenarios["example3"], certificates["example3"]
    a = run_episode(sc, cert, sc.targets[0], seed=4).csv_text()
    b = run_episode(sc, cert, sc.targets[0], seed=4).csv_text()
    assert a == b


def corridor(targets, rects=(), x0=(12.0, 25.0), **kw):
    env = Environment(200, 50, rects=list(rects))
    cfg = MissionConfig(env, targets, [(x0[0] + 10, x0[1]), (195, x0[1])], **kw)
    return Scenario("corridor", dubins_dynamics(1.0), DubinsPolar((0.0, 1.0)), None,
                    [SemiAlgebraicSet([ball(t[:2], t[2])]) for t in targets], np.array(x0), degree=8, mission=cfg,
                    controller=ControllerParams(N=100, p_omega=3.0))


def test_mission_single_target_corridor():
    sc = corridor([(25.0, 25.0, 10.0)])
    legs = run_mission(sc, seed=0)
    assert len(legs) == 1
    tr = legs[0].trajectory
    assert tr.outcome == HIT and intrusions(sc.mission.environment, tr.states) == []
    assert all(v > 0 for v in tr.v[:-1])
    assert np.linalg.norm(tr.states[-1] - [25, 25]) <= 10
    assert tr.hit_time <= hitting_bounds(legs[0].certificate, np.zeros(2))[0]


@pytest.mark.xfail(raises=MissionError, strict=True,
                   reason="a degree-6 safe set learned at D=80 closes a wall gap, and Dubins certificates at "
                          "lambda=1.01 need the target within a few units; see the decisions ledger")
def test_mission_through_wall_gap():
    sc = corridor([(28.0, 25.0, 9.0)], rects=[(16, 0, 17, 20), (16, 30, 17, 50)], x0=(12.0, 25.0))
    tr = run_mission(sc, seed=0)[0].trajectory
    assert intrusions(sc.mission.environment, tr.states) == []
    assert any(s[0] > 17 for s in tr.states) and all(20 < s[1] < 30 for s in tr.states if 16 <= s[0] <= 17)


def test_mission_empty_target_list():
    assert run_mission(corridor([]), seed=0) == []


def test_mission_stage_error():
    # an obstacle at the start position fails in the scan stage
    sc = corridor([(25.0, 25.0, 10.0)], rects=[(10, 20, 14, 30)])
    with pytest.raises(MissionError) as exc:
        run_mission(sc)
    assert exc.value.stage == "scan" and exc.value.target_index == 0


def test_reference_run_reaches_targets_in_clear_corridor():
    sc = corridor([(60.0, 25.0, 3.0), (120.0, 25.0, 3.0)])
    tr = run_reference(sc)
    assert tr.outcome == HIT and tr.info["intrusions"] == [] and all(tr.info["targets_visited"])


def test_render_svg():
    sc = corridor([(25.0, 25.0, 10.0)], rects=[(50, 10, 60, 20)])
    tr = run_reference(sc, max_steps=20)
    svg = render_svg(sc.mission.environment, [tr], sc.mission.targets, tr)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>") and "polyline" in svg


def test_scenario_rejects_bad_input(scenarios):
    sc = scenarios["example2"]
    with pytest.raises(ValueError):
        Scenario("x", sc.dynamics, sc.dist, sc.C, sc.targets, [2.0, 0.0])
    with pytest.raises(ValueError):
        Scenario("x", sc.dynamics, sc.dist, sc.C, sc.targets, [0.0, 0.0], lam=1.0)
