"""Command-line entry points, scenario files, artifacts and the encoding benchmark."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import re
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .control import ControllerParams
from .crs import Certificate, CertificateError, ChatError, compute_certificate, hitting_bounds, validate
from .expectation import DynamicsSpec, distribution_from_json
from .poly import ParseError, SemiAlgebraicSet, ball, parse_polynomial
from .safeset import SensorScan, SvmError, generate_labels, train_svm
from .sdp import SdpError, solve
from .sdpa import SdpaFormatError, export_sdpa, read_sdpa
from .sim import (HIT, Environment, MissionConfig, MissionError, Scenario, Trajectory, intrusions, render_svg,
                  run_episode, run_mission, run_reference)
from .sos import PROP1, THEOREM1, EncodingError, SosProgram, encode

log = logging.getLogger("reachcert")

PAPER_EXACT = "paper-exact"
ENCODINGS = (THEOREM1, PROP1, PAPER_EXACT)

# exit codes per error category
EXIT_CODES = {
    "usage": 2,
    "schema": 3,
    "infeasible": 4,
    "validation": 5,
    "simulation": 6,
    "mission": 7,
    "io": 8,
    "numerical": 9,
    "svm": 10,
    "bench": 11,
}


class CliError(RuntimeError):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


class ScenarioError(ValueError):
    """Schema violation; ``line`` is 1-based within the scenario file when known."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None, path: str = ""):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.field = field
        self.line = line


# -----------------------------------------------------------------------------
# scenario files


def bundled_scenarios() -> list[str]:
    root = resources.files("reachcert") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_scenario(name_or_path) -> Path:
    """A filesystem path, or the name of a bundled scenario such as ``example2``."""
    p = Path(name_or_path)
    if p.exists():
        return p
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    bundled = resources.files("reachcert") / "scenarios" / f"{stem}.json"
    if bundled.is_file():
        return Path(str(bundled))
    raise CliError("io", f"scenario {name_or_path!r} not found (bundled: {', '.join(bundled_scenarios())})")


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


class _Reader:
    """Field access with errors pointing at the offending line of the file."""

    def __init__(self, text: str, path: str):
        self.text = text
        self.path = path

    def fail(self, field: str, message: str, anchor: str | None = None) -> ScenarioError:
        return ScenarioError(message, field=field, line=_line_of(self.text, anchor or field), path=self.path)

    def get(self, d: dict, key: str, kind=None, required: bool = True, default=None, where: str = ""):
        name = f"{where}.{key}" if where else key
        if key not in d:
            if required:
                line = _line_of(self.text, where.split(".")[-1]) if where else 1
                raise ScenarioError(f"missing required field '{name}'", field=name, line=line, path=self.path)
            return default
        value = d[key]
        if kind is not None and not isinstance(value, kind):
            kinds = kind if isinstance(kind, tuple) else (kind,)
            expected = " or ".join(k.__name__ for k in kinds)
            raise self.fail(name, f"field '{name}' must be {expected}, got {type(value).__name__}", key)
        return value

    def number(self, d: dict, key: str, required: bool = True, default=None, where: str = "") -> float:
        v = self.get(d, key, (int, float), required, default, where)
        if isinstance(v, bool):
            raise self.fail(key, f"field '{key}' must be a number", key)
        return None if v is None else float(v)

    def polys(self, texts, names: Sequence[str], field: str) -> list:
        if isinstance(texts, str):
            texts = [texts]
        if not isinstance(texts, list) or not texts or not all(isinstance(t, str) for t in texts):
            raise self.fail(field, f"field '{field}' must be a non-empty list of polynomial strings")
        out = []
        for t in texts:
            try:
                out.append(parse_polynomial(t, names=names))
            except (ParseError, ValueError) as exc:
                line = None
                idx = self.text.find(json.dumps(t)[1:-1])
                if idx >= 0:
                    line = self.text.count("\n", 0, idx) + 1
                raise ScenarioError(f"cannot parse '{t}' in '{field}': {exc}", field=field,
                                    line=line or _line_of(self.text, field), path=self.path) from exc
        return out


def _controller(r: _Reader, d: dict) -> ControllerParams:
    try:
        return ControllerParams(N=int(r.number(d, "N", False, 100, "controller")),
                                p_omega=r.number(d, "p_omega", False, 0.0, "controller"),
                                rng_seed=int(r.number(d, "seed", False, 0, "controller")),
                                fallback_growth=int(r.number(d, "fallback_growth", False, 10, "controller")))
    except ValueError as exc:
        raise r.fail("controller", str(exc)) from exc


def parse_scenario_text(text: str, path: str = "<scenario>", name: str | None = None) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=path) from exc
    if not isinstance(data, dict):
        raise ScenarioError("top level must be an object", line=1, path=path)
    r = _Reader(text, path)

    dist_d = r.get(data, "control_distribution", dict)
    try:
        dist = distribution_from_json(dist_d)
    except (KeyError, TypeError, ValueError) as exc:
        raise r.fail("control_distribution", f"bad control distribution: {exc}") from exc

    dyn_texts = r.get(data, "dynamics", list)
    n = len(dyn_texts)
    if n == 0:
        raise r.fail("dynamics", "field 'dynamics' must list one polynomial per state")
    names = [f"x{i}" for i in range(n)] + [f"u{j}" for j in range(dist.n_atoms)]
    comps = r.polys(dyn_texts, names, "dynamics")
    f = DynamicsSpec(n, dist.n_atoms, tuple(comps))
    state_names = names[:n]

    x0 = r.get(data, "x0", list)
    if len(x0) != n or not all(isinstance(c, (int, float)) for c in x0):
        raise r.fail("x0", f"field 'x0' must list {n} numbers")
    lam = r.number(data, "lambda")
    if not lam > 1.0:
        raise r.fail("lambda", f"field 'lambda' must exceed 1, got {lam}")
    eps = r.number(data, "epsilon")
    if not eps > 0:
        raise r.fail("epsilon", "field 'epsilon' must be positive")
    degree = int(r.number(data, "degree"))
    if degree < 2 or degree % 2:
        raise r.fail("degree", f"field 'degree' must be even and >= 2, got {degree}")
    controller = _controller(r, r.get(data, "controller", dict, False, {}))
    max_steps = r.get(data, "max_steps", int, False)
    mult = r.get(data, "multiplier_degrees", dict, False, {})
    for k, v in mult.items():
        if not isinstance(v, int) or v < 0 or v % 2:
            raise r.fail("multiplier_degrees", f"multiplier degree for '{k}' must be an even integer >= 0", k)

    env_d = r.get(data, "environment", (dict, type(None)), False)
    targets_d = r.get(data, "targets", list)
    if env_d is None:
        sets = r.get(data, "sets", dict)
        C = SemiAlgebraicSet(r.polys(r.get(sets, "safe", (list, str), where="sets"), state_names, "safe"))
        chat_t = r.get(sets, "chat", (list, str), False, where="sets")
        chat = None if chat_t is None else SemiAlgebraicSet(r.polys(chat_t, state_names, "chat"))
        targets = []
        for t in targets_d:
            if isinstance(t, dict) and "disc" in t:
                *c, rad = t["disc"]
                targets.append(SemiAlgebraicSet([ball(c, rad)]))
            else:
                targets.append(SemiAlgebraicSet(r.polys(t, state_names, "targets")))
        if not targets:
            raise r.fail("targets", "field 'targets' must not be empty")
        mission = None
    else:
        try:
            env = Environment.from_json(env_d)
        except (KeyError, TypeError, ValueError) as exc:
            raise r.fail("environment", f"bad environment: {exc}") from exc
        discs = []
        for t in targets_d:
            disc = t.get("disc") if isinstance(t, dict) else t
            if not (isinstance(disc, list) and len(disc) == 3 and all(isinstance(c, (int, float)) for c in disc)):
                raise r.fail("targets", "mission targets must be discs [cx, cy, r]")
            discs.append(tuple(float(c) for c in disc))
        ctrl_d = r.get(data, "controller", dict, False, {})
        waypoints = r.get(ctrl_d, "waypoints", list, where="controller")
        md = r.get(data, "mission", dict, False, {})
        known = {"scan_range", "n_rays", "delta", "local_radius", "c_plus", "c_minus", "svm_degree",
                 "acceptance_radius", "lookahead"}
        unknown = set(md) - known
        if unknown:
            raise r.fail("mission", f"unknown mission field(s): {', '.join(sorted(unknown))}", sorted(unknown)[0])
        mission = MissionConfig(env, discs, [tuple(w) for w in waypoints], **md)
        C = None
        chat = None
        targets = [SemiAlgebraicSet([ball(d[:2], d[2])]) for d in discs]
        if env.intrudes(x0):
            raise r.fail("x0", "x0 lies inside an obstacle or outside the scene")

    if C is not None and not C.contains(np.asarray(x0, dtype=float)):
        raise r.fail("x0", f"x0 = {x0} lies outside the safe set")
    return Scenario(name=name or Path(path).stem, dynamics=f, dist=dist, C=C, targets=targets, x0=np.asarray(x0, float),
                    lam=lam, eps=eps, degree=degree, controller=controller, chat=chat, max_steps=max_steps,
                    multiplier_degrees=dict(mult), mission=mission)


def parse_scenario(path) -> Scenario:
    p = resolve_scenario(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise CliError("io", f"cannot read {p}: {exc}") from exc
    return parse_scenario_text(text, str(p), p.stem)


# -----------------------------------------------------------------------------
# benchmark


@dataclass
class BenchRow:
    scenario: str
    degree: int
    encoding: str
    seconds: float
    status: str
    variables: int
    rows: int
    feasible: bool
    error: str = ""


def bench_encodings(scenario: Scenario, degrees: Sequence[int], target: int = 0, repeats: int = 1) -> list[BenchRow]:
    """Encode and solve the certificate SDP with both encodings at each degree.

    The wall time covers encoding plus solving, the best of ``repeats`` runs.
    Failures are recorded in the row and the run continues.
    """
    problem = scenario.problem(target)
    chat = problem.chat
    rows = []
    for d in degrees:
        for enc in (THEOREM1, PROP1):
            best, status, nvar, nrow, err = float("inf"), "error", 0, 0, ""
            for _ in range(max(1, repeats)):
                try:
                    if chat is None:
                        from .crs import compute_chat
                        chat = compute_chat(problem.safe, problem.dynamics, problem.dist)
                    prog = SosProgram(v_degree=d, lam=scenario.lam, eps=scenario.eps, safe=problem.safe,
                                      target=problem.target, chat=chat, x0=problem.x0, dynamics=problem.dynamics,
                                      dist=problem.dist, encoding=enc,
                                      multiplier_degrees=dict(problem.multiplier_degrees))
                    t0 = time.perf_counter()
                    form = encode(prog)
                    sol = solve(form)
                    best = min(best, time.perf_counter() - t0)
                    status, nvar, nrow = sol.status, form.n_scalar_vars, form.n_rows
                except (EncodingError, SdpError, ChatError, ValueError, np.linalg.LinAlgError) as exc:
                    err = f"{type(exc).__name__}: {exc}"
                    break
            rows.append(BenchRow(scenario.name, d, enc, best, status, nvar, nrow, status == "optimal", err))
            log.info("bench %s degree %d %s: %s in %.3fs", scenario.name, d, enc, status, best)
    return rows


def bench_violations(rows: Sequence[BenchRow], time_factor: float = 1.25, var_factor: float = 1.0) -> list[str]:
    """Cells where the theorem1 encoding is not at least as cheap as prop1 (up to the factors)."""
    by = {(r.scenario, r.degree, r.encoding): r for r in rows}
    out = []
    for (sc, d, enc), r in by.items():
        if enc != THEOREM1 or (sc, d, PROP1) not in by:
            continue
        p = by[(sc, d, PROP1)]
        if not (r.feasible and p.feasible):
            out.append(f"{sc} degree {d}: not both feasible ({r.status}, {p.status})")
            continue
        if r.variables > var_factor * p.variables:
            out.append(f"{sc} degree {d}: {r.variables} variables vs {p.variables}")
        if r.seconds > time_factor * p.seconds:
            out.append(f"{sc} degree {d}: {r.seconds:.3f}s vs {p.seconds:.3f}s")
    return out


BENCH_FIELDS = ("scenario", "degree", "encoding", "seconds", "status", "variables", "rows", "feasible", "error")


def bench_csv(rows: Sequence[BenchRow]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(BENCH_FIELDS)
    for r in rows:
        w.writerow([getattr(r, k) if k != "seconds" else f"{r.seconds:.6f}" for k in BENCH_FIELDS])
    return out.getvalue()


# -----------------------------------------------------------------------------
# artifacts


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Artifacts:
    """Writes outputs under one directory and records their hashes in ``manifest.json``."""

    def __init__(self, out: Path, command: str, args: dict):
        self.out = Path(out)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CliError("io", f"cannot create {self.out}: {exc}") from exc
        self.command = command
        self.args = args
        self.files: dict[str, str] = {}

    def write_text(self, name: str, text: str) -> Path:
        p = self.out / name
        p.write_text(text)
        self.files[name] = sha256_file(p)
        return p

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(obj, indent=2) + "\n")

    def add(self, name: str) -> None:
        self.files[name] = sha256_file(self.out / name)

    def finish(self) -> Path:
        manifest = {"command": self.command, "args": self.args,
                    "artifacts": [{"file": k, "sha256": v} for k, v in sorted(self.files.items())]}
        p = self.out / "manifest.json"
        p.write_text(json.dumps(manifest, indent=2) + "\n")
        return p


def load_certificate(path) -> Certificate:
    try:
        return Certificate.from_json(json.loads(Path(path).read_text()))
    except OSError as exc:
        raise CliError("io", f"cannot read {path}: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError("schema", f"bad certificate file {path}: {exc}") from exc


# -----------------------------------------------------------------------------
# commands


def _encoding(args) -> tuple[str, bool]:
    enc = args.encoding
    exact = bool(getattr(args, "paper_exact", False)) or enc == PAPER_EXACT
    return (THEOREM1 if enc == PAPER_EXACT else enc), exact


def _override(scenario: Scenario, args) -> Scenario:
    if getattr(args, "degree", None) is not None:
        if args.degree < 2 or args.degree % 2:
            raise CliError("usage", f"--degree must be even and >= 2, got {args.degree}")
        scenario.degree = args.degree
    if getattr(args, "lam", None) is not None:
        if not args.lam > 1:
            raise CliError("usage", "--lambda must exceed 1")
        scenario.lam = args.lam
    if getattr(args, "epsilon", None) is not None:
        if not args.epsilon > 0:
            raise CliError("usage", "--epsilon must be positive")
        scenario.eps = args.epsilon
    return scenario


def synthesize(scenario: Scenario, target: int = 0, seed: int = 0, encoding: str = THEOREM1,
               paper_exact: bool = False) -> Certificate:
    if scenario.C is None:
        raise CliError("usage", "scenario has an environment; use the 'mission' command")
    if not 0 <= target < len(scenario.targets):
        raise CliError("usage", f"target index {target} out of range")
    return compute_certificate(scenario.problem(target), v_degree=scenario.degree, lam=scenario.lam,
                               eps=scenario.eps, encoding=encoding, paper_exact=paper_exact, seed=seed)


def simulate(scenario: Scenario, cert: Certificate, target: int = 0, seed: int = 0) -> Trajectory:
    return run_episode(scenario, cert, scenario.targets[target], seed=seed)


def _summary(cert: Certificate, x0) -> dict:
    T, ET = hitting_bounds(cert, x0)
    return {"v_x0": cert.value(x0), "M": cert.M, "M_source": cert.M_source, "T_max": T, "E_T_max": ET}


def cmd_synthesize(args, art: Artifacts) -> int:
    sc = _override(parse_scenario(args.scenario), args)
    enc, exact = _encoding(args)
    cert = synthesize(sc, args.target, args.seed, enc, exact)
    art.write_json("certificate.json", cert.to_json())
    s = _summary(cert, sc.x0)
    print(f"certificate: degree {sc.degree}, v(x0) = {s['v_x0']:.6g}, M = {s['M']:.6g} ({s['M_source']}), "
          f"T_max = {s['T_max']:.2f}, E_T_max = {s['E_T_max']:.2f}")
    return 0


def _plot_episode(sc: Scenario, traj: Trajectory, art: Artifacts) -> None:
    # phase-plane plot of a set-based scenario on the box of the safe set
    try:
        lo, hi = sc.C.bounding_box()[:2].T
    except ValueError:
        lo, hi = np.full(2, -1.5), np.full(2, 1.5)
    W, H = 400.0, 400.0

    def pt(p):
        return f"{(p[0] - lo[0]) / (hi[0] - lo[0]) * W:.2f},{(hi[1] - p[1]) / (hi[1] - lo[1]) * H:.2f}"

    path = " ".join(pt(s) for s in traj.states)
    svg = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{H:.0f}">'
           f'<rect width="{W:.0f}" height="{H:.0f}" fill="white" stroke="black"/>'
           f'<polyline points="{path}" fill="none" stroke="blue"/></svg>\n')
    art.write_text("trajectory.svg", svg)


def cmd_simulate(args, art: Artifacts) -> int:
    sc = _override(parse_scenario(args.scenario), args)
    if args.certificate:
        cert = load_certificate(args.certificate)
    else:
        enc, exact = _encoding(args)
        cert = synthesize(sc, args.target, args.seed, enc, exact)
        art.write_json("certificate.json", cert.to_json())
    traj = simulate(sc, cert, args.target, args.seed)
    art.write_text("trajectory.csv", traj.csv_text())
    if args.plot:
        _plot_episode(sc, traj, art)
    T, ET = hitting_bounds(cert, sc.x0)
    print(f"outcome {traj.outcome}, hit_time {traj.hit_time}, T_max {T:.2f}, E_T_max {ET:.2f}")
    if traj.outcome != HIT:
        raise CliError("simulation", f"episode ended with {traj.outcome}: {traj.message}")
    if traj.hit_time > T:
        raise CliError("validation", f"hit time {traj.hit_time} exceeds the bound {T:.2f}")
    return 0


def cmd_validate(args, art: Artifacts) -> int:
    sc = _override(parse_scenario(args.scenario), args)
    cert = load_certificate(args.certificate)
    rep = validate(cert, sc.problem(args.target), n_samples=args.samples, seed=args.seed)
    art.write_json("validation.json", rep.to_json())
    for k, ok in rep.checks.items():
        print(f"{k}: {'pass' if ok else 'FAIL'}")
    if not rep.passed:
        raise CliError("validation", "failed checks: " + ", ".join(k for k, ok in rep.checks.items() if not ok))
    return 0


def cmd_mission(args, art: Artifacts) -> int:
    sc = _override(parse_scenario(args.scenario), args)
    if sc.mission is None:
        raise CliError("usage", "scenario has no environment")
    env = sc.mission.environment
    t0 = time.perf_counter()
    try:
        legs = run_mission(sc, seed=args.seed)
    except MissionError as exc:
        raise CliError("mission", str(exc)) from exc
    elapsed = time.perf_counter() - t0
    ref = run_reference(sc)
    summary = {"seconds": elapsed, "legs": [], "reference": {"outcome": ref.outcome, **ref.info}}
    for k, leg in enumerate(legs):
        tr = leg.trajectory
        art.write_text(f"leg{k}.csv", tr.csv_text())
        art.write_json(f"certificate{k}.json", leg.certificate.to_json())
        summary["legs"].append({"outcome": tr.outcome, "hit_time": tr.hit_time,
                                "intrusions": intrusions(env, tr.states), "timings": leg.timings})
        print(f"target {k}: {tr.outcome} at step {tr.hit_time}")
    art.write_text("reference.csv", ref.csv_text())
    art.write_json("mission.json", summary)
    if args.plot:
        art.write_text("mission.svg", render_svg(env, [leg.trajectory for leg in legs], sc.mission.targets, ref))
    print(f"reference: {ref.outcome}, intrusions at {ref.info['intrusions']}, visited {ref.info['targets_visited']}")
    bad = [k for k, leg in enumerate(legs) if intrusions(env, leg.trajectory.states)]
    if bad:
        raise CliError("mission", f"obstacle intrusion on legs {bad}")
    return 0


def cmd_train_safeset(args, art: Artifacts) -> int:
    try:
        scan = SensorScan.from_csv(args.scan, max_range=args.range)
    except OSError as exc:
        raise CliError("io", f"cannot read {args.scan}: {exc}") from exc
    except ValueError as exc:
        raise CliError("schema", str(exc)) from exc
    delta = args.delta if args.delta is not None else args.range / 10.0
    samples = generate_labels(scan, delta)
    model = train_svm(samples, c_plus=args.cplus, c_minus=args.cminus, degree=args.degree)
    art.write_json("safeset.json", model.to_json())
    X = np.array([s.x for s in samples])
    y = np.array([s.y for s in samples])
    dec = model.decision(X)
    unsafe_in = int(np.sum((y < 0) & (dec >= 1.0)))
    safe_out = int(np.sum((y > 0) & (dec < 1.0)))
    print(f"trained on {len(samples)} samples: {len(model.coef)} support vectors, {model.iterations} iterations, "
          f"{unsafe_in} unsafe samples inside, {safe_out} safe samples outside the learned set")
    return 0


def cmd_export_sdpa(args, art: Artifacts) -> int:
    sc = _override(parse_scenario(args.scenario), args)
    enc, exact = _encoding(args)
    if sc.C is None:
        raise CliError("usage", "scenario has an environment; nothing to export")
    problem = sc.problem(args.target)
    chat = problem.chat
    if chat is None:
        from .crs import compute_chat
        chat = compute_chat(problem.safe, problem.dynamics, problem.dist, seed=args.seed)
    prog = SosProgram(v_degree=sc.degree, lam=sc.lam, eps=sc.eps, safe=problem.safe, target=problem.target,
                      chat=chat, x0=problem.x0, dynamics=problem.dynamics, dist=problem.dist, encoding=enc,
                      paper_exact=exact, multiplier_degrees=dict(problem.multiplier_degrees))
    form = encode(prog)
    name = f"{sc.name}_d{sc.degree}_{enc}.dat-s"
    n = export_sdpa(form, art.out / name, title=f"{sc.name} degree {sc.degree} {enc}")
    art.add(name)
    print(f"wrote {name}: {form.n_rows} constraints, {len(form.block_dims)} blocks, {n} entries")
    return 0


def cmd_solve_sdpa(args, art: Artifacts) -> int:
    try:
        form = read_sdpa(args.file)
    except OSError as exc:
        raise CliError("io", f"cannot read {args.file}: {exc}") from exc
    except SdpaFormatError as exc:
        raise CliError("schema", str(exc)) from exc
    sol = solve(form)
    res = {"status": sol.status, "iterations": sol.iterations, "primal_residual": sol.primal_residual,
           "dual_residual": sol.dual_residual, "gap": sol.gap, "primal_objective": sol.primal_objective,
           "dual_objective": sol.dual_objective}
    art.write_json("solution.json", res)
    print(f"status {sol.status}")
    print(f"primal_residual {sol.primal_residual:.3e}")
    print(f"dual_residual {sol.dual_residual:.3e}")
    print(f"gap {sol.gap:.3e}")
    if sol.status == "infeasible":
        raise CliError("infeasible", "problem is infeasible")
    if not sol.ok:
        raise CliError("numerical", f"solver stopped with {sol.status}")
    return 0


def cmd_bench(args, art: Artifacts) -> int:
    rows = []
    for s in args.scenario:
        rows += bench_encodings(parse_scenario(s), args.degrees, repeats=args.repeats)
    text = bench_csv(rows)
    art.write_text("bench.csv", text)
    sys.stdout.write(text)
    bad = bench_violations(rows, args.time_factor)
    if bad:
        raise CliError("bench", "; ".join(bad))
    return 0


# -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reachcert", description="Reach-avoid certificates for polynomial systems.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(q, scenario=True, out="reachcert-out"):
        if scenario:
            q.add_argument("--scenario", required=True, help="scenario JSON file or bundled name")
            q.add_argument("--degree", type=int)
            q.add_argument("--lambda", dest="lam", type=float)
            q.add_argument("--epsilon", type=float)
            q.add_argument("--target", type=int, default=0, help="target index")
            q.add_argument("--encoding", choices=ENCODINGS, default=THEOREM1)
            q.add_argument("--paper-exact", action="store_true")
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--out", default=out)

    common(sub.add_parser("synthesize", help="compute and validate a certificate"))
    q = sub.add_parser("simulate", help="run a controlled episode")
    common(q)
    q.add_argument("--certificate", help="certificate JSON; synthesized when omitted")
    q.add_argument("--plot", action="store_true")
    q = sub.add_parser("mission", help="run the multi-target mission")
    common(q)
    q.add_argument("--plot", action="store_true")
    q = sub.add_parser("validate", help="re-validate a stored certificate")
    common(q)
    q.add_argument("--certificate", required=True)
    q.add_argument("--samples", type=int, default=10_000)
    q = sub.add_parser("train-safeset", help="learn a safe set from a scan CSV")
    common(q, scenario=False)
    q.add_argument("--scan", required=True)
    q.add_argument("--cminus", type=float, default=1e12)
    q.add_argument("--cplus", type=float, default=10.0)
    q.add_argument("--degree", type=int, default=6)
    q.add_argument("--range", type=float, default=80.0, help="sensor range D")
    q.add_argument("--delta", type=float)
    common(sub.add_parser("export-sdpa", help="write the certificate SDP in SDPA sparse format"))
    q = sub.add_parser("solve-sdpa", help="solve an SDPA sparse file")
    q.add_argument("file")
    q.add_argument("--out", default="reachcert-out")
    q = sub.add_parser("bench", help="compare the two encodings")
    q.add_argument("--scenario", nargs="+", required=True)
    q.add_argument("--degrees", type=int, nargs="+", default=[6, 8, 10])
    q.add_argument("--time-factor", type=float, default=1.25)
    q.add_argument("--repeats", type=int, default=1)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", default="reachcert-out")
    return p


COMMANDS = {
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "mission": cmd_mission,
    "validate": cmd_validate,
    "train-safeset": cmd_train_safeset,
    "export-sdpa": cmd_export_sdpa,
    "solve-sdpa": cmd_solve_sdpa,
    "bench": cmd_bench,
}


def _category(exc: BaseException) -> str:
    if isinstance(exc, CliError):
        return exc.category
    if isinstance(exc, (ScenarioError, ParseError)):
        return "schema"
    if isinstance(exc, CertificateError):
        sol = exc.solution
        if sol is not None and sol.status == "infeasible":
            return "infeasible"
        return "validation" if exc.report is not None else "numerical"
    if isinstance(exc, (SdpError, np.linalg.LinAlgError, ChatError)):
        return "numerical"
    if isinstance(exc, SvmError):
        return "svm"
    if isinstance(exc, OSError):
        return "io"
    if isinstance(exc, (EncodingError, ValueError)):
        return "schema"
    raise exc


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("REACHCERT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    recorded = {k: v for k, v in vars(args).items() if k != "command"}
    try:
        art = Artifacts(Path(args.out), args.command, recorded)
        try:
            code = COMMANDS[args.command](args, art)
        finally:
            art.finish()
        return code
    except Exception as exc:  # noqa: BLE001 - mapped to a category or re-raised
        cat = _category(exc)
        print(f"reachcert: error[{cat}]: {exc}", file=sys.stderr)
        return EXIT_CODES[cat]


if __name__ == "__main__":
    sys.exit(main())
