"""Obstacle scenes, ray-cast sensing, closed-loop episodes and the multi-target mission."""
from __future__ import annotations

import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .control import ControllerParams, LineOfSight, ViabilityLost, synthesize_step
from .crs import Certificate, ReachAvoidProblem, compute_chat, compute_certificate, hitting_bounds
from .expectation import ControlDistribution, DynamicsSpec, dubins_dynamics
from .poly import SemiAlgebraicSet, ball
from .safeset import SensorScan, generate_labels, learned_safe_set, train_svm

log = logging.getLogger(__name__)

HIT, MAX_STEPS, VIABILITY_LOST, SAFETY_VIOLATION = "hit", "max_steps", "viability_lost", "safety_violation"


# -----------------------------------------------------------------------------
# scene geometry


@dataclass
class Environment:
    """Axis-aligned box ``[0, width] x [0, height]`` with rectangle and disc obstacles."""

    width: float
    height: float
    rects: list = field(default_factory=list)  # (x0, y0, x1, y1)
    discs: list = field(default_factory=list)  # (cx, cy, r)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("scene dimensions must be positive")
        self.rects = [tuple(float(c) for c in r) for r in self.rects]
        self.discs = [tuple(float(c) for c in d) for d in self.discs]
        for x0, y0, x1, y1 in self.rects:
            if not (0 <= x0 < x1 <= self.width and 0 <= y0 < y1 <= self.height):
                raise ValueError(f"rectangle {(x0, y0, x1, y1)} is not inside the scene")
        for cx, cy, r in self.discs:
            if r <= 0 or cx - r < 0 or cy - r < 0 or cx + r > self.width or cy + r > self.height:
                raise ValueError(f"disc {(cx, cy, r)} is not inside the scene")

    def in_obstacle(self, p: Sequence[float]) -> bool:
        x, y = float(p[0]), float(p[1])
        if any(x0 <= x <= x1 and y0 <= y <= y1 for x0, y0, x1, y1 in self.rects):
            return True
        return any((x - cx) ** 2 + (y - cy) ** 2 <= r * r for cx, cy, r in self.discs)

    def in_bounds(self, p: Sequence[float]) -> bool:
        return 0.0 <= p[0] <= self.width and 0.0 <= p[1] <= self.height

    def intrudes(self, p: Sequence[float]) -> bool:
        """Inside an obstacle or outside the scene walls."""
        return self.in_obstacle(p) or not self.in_bounds(p)

    def ray_distance(self, origin: Sequence[float], angle: float) -> float:
        """Distance along the ray to the first obstacle or wall."""
        ox, oy = float(origin[0]), float(origin[1])
        dx, dy = math.cos(angle), math.sin(angle)
        best = math.inf
        # walls, hit from inside
        if dx > 0:
            best = min(best, (self.width - ox) / dx)
        elif dx < 0:
            best = min(best, -ox / dx)
        if dy > 0:
            best = min(best, (self.height - oy) / dy)
        elif dy < 0:
            best = min(best, -oy / dy)
        for x0, y0, x1, y1 in self.rects:
            t = _ray_box(ox, oy, dx, dy, x0, y0, x1, y1)
            if t is not None:
                best = min(best, t)
        for cx, cy, r in self.discs:
            t = _ray_disc(ox, oy, dx, dy, cx, cy, r)
            if t is not None:
                best = min(best, t)
        return best

    def to_json(self) -> dict:
        return {"width": self.width, "height": self.height,
                "obstacles": [{"rect": list(r)} for r in self.rects] + [{"disc": list(d)} for d in self.discs]}

    @classmethod
    def from_json(cls, d: dict) -> Environment:
        rects, discs = [], []
        for ob in d.get("obstacles", []):
            if "rect" in ob:
                rects.append(ob["rect"])
            elif "disc" in ob:
                discs.append(ob["disc"])
            else:
                raise ValueError(f"unknown obstacle {ob!r}")
        return cls(float(d["width"]), float(d["height"]), rects, discs)


def _ray_box(ox, oy, dx, dy, x0, y0, x1, y1):
    tmin, tmax = -math.inf, math.inf
    for o, d, lo, hi in ((ox, dx, x0, x1), (oy, dy, y0, y1)):
        if d == 0.0:
            if o < lo or o > hi:
                return None
            continue
        t1, t2 = (lo - o) / d, (hi - o) / d
        tmin, tmax = max(tmin, min(t1, t2)), min(tmax, max(t1, t2))
    if tmax < max(tmin, 0.0):
        return None
    return max(tmin, 0.0)


def _ray_disc(ox, oy, dx, dy, cx, cy, r):
    fx, fy = ox - cx, oy - cy
    b = fx * dx + fy * dy
    c = fx * fx + fy * fy - r * r
    disc = b * b - c
    if disc < 0:
        return None
    sq = math.sqrt(disc)
    t = -b - sq
    if t < 0:
        t = -b + sq
    return t if t >= 0 else None


def lidar_scan(env: Environment, origin: Sequence[float], n_rays: int = 64, D: float = 80.0) -> SensorScan:
    """Evenly spaced rays over ``[0, 2 pi)``; distances beyond ``D`` are reported as ``inf``."""
    origin = np.asarray(origin, dtype=float)
    if not env.in_bounds(origin) or env.in_obstacle(origin):
        raise ValueError(f"scan origin {origin.tolist()} lies inside an obstacle or outside the scene")
    angles = 2.0 * math.pi * np.arange(n_rays) / n_rays
    dist = np.array([env.ray_distance(origin, a) for a in angles])
    dist[dist > D] = math.inf
    return SensorScan(origin, angles, dist, float(D))


def step(f: DynamicsSpec, dist: ControlDistribution, x: Sequence[float], u: Sequence[float]) -> np.ndarray:
    """Apply the dynamics to state ``x`` under raw control ``u``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (f.n_state,):
        raise ValueError(f"state has dimension {x.size}, dynamics expect {f.n_state}")
    if u.shape != (dist.n_controls,):
        raise ValueError(f"control has dimension {u.size}, distribution expects {dist.n_controls}")
    return f.evaluate(x, dist.atoms(u[None])[0])


# -----------------------------------------------------------------------------
# scenario and trajectory


@dataclass
class MissionConfig:
    """Mission-only settings; positions are scene coordinates."""

    environment: Environment
    targets: list  # (cx, cy, r) discs
    reference_path: list  # LOS waypoints
    scan_range: float = 80.0
    n_rays: int = 64
    delta: float | None = None  # label offset, default scan_range / 10
    local_radius: float = 40.0
    c_plus: float = 10.0
    c_minus: float = 1e12
    svm_degree: int = 6
    acceptance_radius: float = 2.0
    lookahead: float = 5.0

    @property
    def label_offset(self) -> float:
        return self.scan_range / 10.0 if self.delta is None else self.delta


@dataclass
class Scenario:
    name: str
    dynamics: DynamicsSpec
    dist: ControlDistribution
    C: SemiAlgebraicSet | None
    targets: list  # SemiAlgebraicSet, in order
    x0: np.ndarray
    lam: float = 1.01
    eps: float = 1e-6
    degree: int = 6
    controller: ControllerParams = field(default_factory=ControllerParams)
    chat: SemiAlgebraicSet | None = None
    max_steps: int | None = None
    multiplier_degrees: dict = field(default_factory=dict)
    mission: MissionConfig | None = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if not self.lam > 1.0:
            raise ValueError("lambda must exceed 1")
        if self.C is not None and not self.C.contains(self.x0):
            raise ValueError("x0 lies outside the safe set")

    def problem(self, index: int = 0) -> ReachAvoidProblem:
        if self.C is None:
            raise ValueError("scenario has no explicit safe set")
        return ReachAvoidProblem(self.dynamics, self.dist, self.C, self.targets[index], self.x0, self.chat,
                                 dict(self.multiplier_degrees))


@dataclass
class Trajectory:
    states: list
    controls: list
    v: list
    outcome: str
    hit_time: int | None = None
    message: str = ""
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.states) != len(self.controls) + 1:
            raise ValueError("need exactly one more state than controls")

    @property
    def n_steps(self) -> int:
        return len(self.controls)

    def csv_text(self) -> str:
        n = len(self.states[0])
        m = len(self.controls[0]) if self.controls else 0
        out = io.StringIO()
        out.write(",".join(["step"] + [f"x{i}" for i in range(n)] + [f"u{j}" for j in range(m)] + ["v"]) + "\n")
        for k, x in enumerate(self.states):
            u = self.controls[k] if k < len(self.controls) else [""] * m
            v = self.v[k] if k < len(self.v) and self.v[k] is not None else ""
            cells = [str(k)] + [repr(float(c)) for c in x] + [c if c == "" else repr(float(c)) for c in u]
            cells.append(v if v == "" else repr(float(v)))
            out.write(",".join(cells) + "\n")
        return out.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())


def default_max_steps(cert: Certificate, x0: Sequence[float]) -> int:
    T, _ = hitting_bounds(cert, x0)
    return 2 * math.ceil(T)


def run_episode(scenario: Scenario, cert: Certificate, target: SemiAlgebraicSet, x0: Sequence[float] | None = None,
                C: SemiAlgebraicSet | None = None, f: DynamicsSpec | None = None, seed: int | None = None,
                max_steps: int | None = None, reference: Callable | None = None,
                length_scale: float = 1.0) -> Trajectory:
    """Drive the certified controller from ``x0`` until the target is hit or the run stops.

    Every state before the hit is checked for ``v > 0`` and membership in C;
    a failure ends the run with outcome ``safety_violation``.
    """
    x = np.asarray(scenario.x0 if x0 is None else x0, dtype=float)
    C = scenario.C if C is None else C
    f = scenario.dynamics if f is None else f
    params = scenario.controller
    rng = np.random.default_rng(params.rng_seed if seed is None else seed)
    if max_steps is None:
        max_steps = scenario.max_steps if scenario.max_steps is not None else default_max_steps(cert, x)
    states, controls, vals = [x.copy()], [], [cert.value(x)]
    for t in range(max_steps + 1):
        if target.contains(x):
            return Trajectory(states, controls, vals, HIT, hit_time=t)
        if not (vals[-1] > 0.0 and C.contains(x)):
            return Trajectory(states, controls, vals, SAFETY_VIOLATION,
                              message=f"state {t} has v = {vals[-1]:.3g} or lies outside C")
        if t == max_steps:
            break
        u_ref = None if reference is None else reference(x)
        try:
            res = synthesize_step(x, cert, f, scenario.dist, target, C, params, u_ref=u_ref, rng=rng,
                                  length_scale=length_scale)
        except ViabilityLost as exc:
            return Trajectory(states, controls, vals, VIABILITY_LOST, message=str(exc))
        x = res.next_state
        states.append(x.copy())
        controls.append(res.u.copy())
        vals.append(res.v_next)
    return Trajectory(states, controls, vals, MAX_STEPS, message=f"no hit within {max_steps} steps")


# -----------------------------------------------------------------------------
# mission


class MissionError(RuntimeError):
    def __init__(self, stage: str, target_index: int, message: str):
        super().__init__(f"mission stage '{stage}' failed for target {target_index}: {message}")
        self.stage = stage
        self.target_index = target_index


@dataclass
class MissionLeg:
    trajectory: Trajectory  # scene coordinates
    certificate: Certificate
    frame: tuple  # (origin, scale)
    model: object
    timings: dict


def _stage(name: str, index: int, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # surfaced with the stage that failed
        raise MissionError(name, index, str(exc)) from exc


def plan_leg(scenario: Scenario, position: Sequence[float], index: int, seed: int = 0):
    """Scan, learn C, and certify one target in the local frame around ``position``."""
    cfg = scenario.mission
    p = np.asarray(position, dtype=float)
    R = cfg.local_radius
    timings = {}
    t0 = time.perf_counter()
    scan = _stage("scan", index, lidar_scan, cfg.environment, p, cfg.n_rays, cfg.scan_range)
    samples = _stage("labels", index, generate_labels, scan, cfg.label_offset)
    model = _stage("svm", index, train_svm, samples, c_plus=cfg.c_plus, c_minus=cfg.c_minus, degree=cfg.svm_degree)
    C = _stage("safe set", index, learned_safe_set, model, p, R)
    timings["svm"] = time.perf_counter() - t0
    f = dubins_dynamics(R)
    cx, cy, r = cfg.targets[index]
    target = SemiAlgebraicSet([ball((np.array([cx, cy]) - p) / R, r / R)])
    t1 = time.perf_counter()
    chat = _stage("chat", index, compute_chat, C, f, scenario.dist, seed=seed)
    problem = ReachAvoidProblem(f, scenario.dist, C, target, np.zeros(2), chat, dict(scenario.multiplier_degrees))
    cert = _stage("certificate", index, compute_certificate, problem, v_degree=scenario.degree, lam=scenario.lam,
                  eps=scenario.eps, seed=seed)
    timings["sdp"] = time.perf_counter() - t1
    return model, C, f, target, cert, timings


def run_mission(scenario: Scenario, seed: int = 0) -> list[MissionLeg]:
    """Visit the mission targets in order, re-planning from each arrival point."""
    cfg = scenario.mission
    if cfg is None:
        raise ValueError("scenario has no environment")
    legs: list[MissionLeg] = []
    position = scenario.x0[:2].copy()
    guide = LineOfSight(list(cfg.reference_path), cfg.acceptance_radius, cfg.lookahead, speed=scenario.dist.v_range[1],
                        start=position)
    R = cfg.local_radius
    for k in range(len(cfg.targets)):
        model, C, f, target, cert, timings = plan_leg(scenario, position, k, seed=seed)
        origin = position.copy()
        to_scene = lambda xi: origin + R * np.asarray(xi)
        ref = lambda xi: guide.reference(to_scene(xi))
        traj = _stage("episode", k, run_episode, scenario, cert, target, x0=np.zeros(2), C=C, f=f,
                      seed=seed + k, reference=ref, length_scale=R)
        scene = Trajectory([to_scene(s) for s in traj.states], traj.controls, traj.v, traj.outcome,
                           traj.hit_time, traj.message, {"target": k})
        legs.append(MissionLeg(scene, cert, (origin, R), model, timings))
        log.info("target %d: %s after %d steps", k, traj.outcome, traj.n_steps)
        if traj.outcome != HIT:
            raise MissionError("episode", k, f"outcome {traj.outcome}: {traj.message}")
        position = scene.states[-1].copy()
    return legs


def run_reference(scenario: Scenario, max_steps: int = 1000) -> Trajectory:
    """Follow the LOS reference alone at full speed and record intrusions and target visits."""
    cfg = scenario.mission
    guide = LineOfSight(list(cfg.reference_path), cfg.acceptance_radius, cfg.lookahead,
                        speed=scenario.dist.v_range[1], start=scenario.x0[:2])
    f = dubins_dynamics(1.0)
    x = scenario.x0[:2].copy()
    states, controls = [x.copy()], []
    intrusions = []
    visited = [False] * len(cfg.targets)
    end = np.asarray(cfg.reference_path[-1], dtype=float)
    for t in range(max_steps):
        for k, (cx, cy, r) in enumerate(cfg.targets):
            if (x[0] - cx) ** 2 + (x[1] - cy) ** 2 <= r * r:
                visited[k] = True
        if guide.active == len(guide.waypoints) - 1 and np.linalg.norm(x - end) <= cfg.acceptance_radius:
            break
        u = guide.reference(x)
        x = step(f, scenario.dist, x, u)
        states.append(x.copy())
        controls.append(u)
        if cfg.environment.intrudes(x):
            intrusions.append(t + 1)
    # visits in order, as the mission requires
    n_hit = 0
    for ok in visited:
        if not ok:
            break
        n_hit += 1
    outcome = SAFETY_VIOLATION if intrusions else (HIT if n_hit == len(cfg.targets) else MAX_STEPS)
    return Trajectory(states, controls, [None] * len(states), outcome,
                      info={"intrusions": intrusions, "targets_visited": visited})


def intrusions(env: Environment, states: Sequence) -> list[int]:
    return [k for k, s in enumerate(states) if env.intrudes(s)]


# -----------------------------------------------------------------------------
# rendering


def render_svg(env: Environment, trajectories: Sequence, targets: Sequence = (), reference: Trajectory | None = None,
               scale: float = 4.0) -> str:
    W, H = env.width * scale, env.height * scale

    def pt(p):
        return f"{p[0] * scale:.2f},{(env.height - p[1]) * scale:.2f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{H:.0f}" viewBox="0 0 {W:.0f} {H:.0f}">',
             f'<rect x="0" y="0" width="{W:.0f}" height="{H:.0f}" fill="white" stroke="black"/>']
    for cx, cy, r in targets:
        parts.append(f'<circle cx="{cx * scale:.2f}" cy="{(env.height - cy) * scale:.2f}" r="{r * scale:.2f}" '
                     'fill="gold" fill-opacity="0.5"/>')
    for x0, y0, x1, y1 in env.rects:
        parts.append(f'<rect x="{x0 * scale:.2f}" y="{(env.height - y1) * scale:.2f}" width="{(x1 - x0) * scale:.2f}" '
                     f'height="{(y1 - y0) * scale:.2f}" fill="dimgray"/>')
    for cx, cy, r in env.discs:
        parts.append(f'<circle cx="{cx * scale:.2f}" cy="{(env.height - cy) * scale:.2f}" r="{r * scale:.2f}" '
                     'fill="dimgray"/>')
    if reference is not None:
        parts.append(f'<polyline fill="none" stroke="black" stroke-dasharray="4,3" '
                     f'points="{" ".join(pt(s) for s in reference.states)}"/>')
    colors = ["crimson", "royalblue", "seagreen", "darkorange", "purple"]
    for k, tr in enumerate(trajectories):
        parts.append(f'<polyline fill="none" stroke="{colors[k % len(colors)]}" stroke-width="1.5" '
                     f'points="{" ".join(pt(s) for s in tr.states)}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
