"""End-to-end acceptance gates; each test prints one pass/fail line."""
import math
import time

import numpy as np
import pytest
from scipy.stats import qmc

from reachcert.cli import bench_encodings, bench_violations, parse_scenario, synthesize
from reachcert.crs import hitting_bounds, validate
from reachcert.safeset import decision_polynomial, generate_labels, train_svm
from reachcert.sdp import OPTIMAL, solve
from reachcert.sdpa import export_sdpa, read_sdpa
from reachcert.sim import HIT, Environment, intrusions, lidar_scan, run_episode, run_mission, run_reference
from reachcert.sos import PROP1, THEOREM1

from oracles import admm_sdp, dense_sdp, random_instance

EXAMPLES = ("example2", "example3", "example4")


@pytest.fixture
def report(capsys):
    def emit(criterion: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\nacceptance {criterion}: {'PASS' if ok else 'FAIL'} {detail}", flush=True)
        assert ok, detail
    return emit


def end_to_end(name, seed=0):
    t0 = time.perf_counter()
    sc = parse_scenario(name)
    cert = synthesize(sc)
    rep = validate(cert, sc.problem(), n_samples=10_000)
    tr = run_episode(sc, cert, sc.targets[0], seed=seed)
    bound = math.log(cert.M / cert.value(sc.x0)) / math.log(cert.lam)
    return sc, cert, rep, tr, bound, time.perf_counter() - t0


def test_1_example2_end_to_end(report):
    sc, cert, rep, tr, bound, secs = end_to_end("example2")
    ok = (rep.passed and rep.one_step_min >= -1e-6 and tr.outcome == HIT and tr.hit_time <= bound
          and secs < 120 and sc.degree == 6 and sc.lam == 1.01 and sc.eps == 1e-6)
    report(1, ok, f"example2 hit {tr.hit_time} <= {bound:.1f}, one-step residual {rep.one_step_min:.2e}, "
                  f"{secs:.1f} s")


def test_2_examples_3_and_4(report):
    lines, ok = [], True
    for name in ("example3", "example4"):
        sc, cert, rep, tr, bound, secs = end_to_end(name)
        ok &= rep.passed and tr.outcome == HIT and tr.hit_time <= bound
        lines.append(f"{name} hit {tr.hit_time} <= {bound:.1f}")
    report(2, ok, ", ".join(lines))


# independent quadrature: plain Gauss-Legendre on raw control values, direct evaluation of v o f


def gauss_nodes(bounds, order):
    t, w = np.polynomial.legendre.leggauss(order)
    axes = [0.5 * (b - a) * t + 0.5 * (a + b) for a, b in bounds]
    wts = [0.5 * w for _ in bounds]
    U = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(bounds))
    W = np.prod(np.stack(np.meshgrid(*wts, indexing="ij"), -1).reshape(-1, len(bounds)), axis=1)
    return U, W


def expect_v(cert, sc, X, order=12):
    U, W = gauss_nodes(sc.dist.bounds, order)
    out = np.zeros(len(X))
    for u, w in zip(U, W):
        out += w * cert.v.evaluate_many(sc.dynamics.evaluate_many(X, np.tile(sc.dist.atoms(u[None])[0], (len(X), 1))))
    return out


def expect2_v(cert, sc, X, order=10):
    U, W = gauss_nodes(sc.dist.bounds, order)
    out = np.zeros(len(X))
    for u, w in zip(U, W):
        Y = sc.dynamics.evaluate_many(X, np.tile(sc.dist.atoms(u[None])[0], (len(X), 1)))
        out += w * expect_v(cert, sc, Y, order)
    return out


def halton_region(box, n, accept, seed):
    sampler = qmc.Halton(d=len(box), scramble=True, seed=seed)
    got = []
    while sum(len(g) for g in got) < n:
        P = qmc.scale(sampler.random(4096), box[:, 0], box[:, 1])
        got.append(P[accept(P)])
    return np.vstack(got)[:n]


def stays(sc, X, grid=33):
    # images under a dense control grid remain in C minus X_r
    U, _ = gauss_nodes(sc.dist.bounds, grid)
    U = np.vstack([U, np.array(sc.dist.bounds, dtype=float).T])
    ok = np.ones(len(X), bool)
    for u in U:
        Y = sc.dynamics.evaluate_many(X, np.tile(sc.dist.atoms(u[None])[0], (len(X), 1)))
        ok &= sc.C.contains_many(Y) & ~sc.targets[0].contains_many(Y)
    return ok


def test_3_certificate_soundness(report, scenarios, certificates):
    lines, ok = [], True
    for name in EXAMPLES:
        sc, cert = scenarios[name], certificates[name]
        C, Xr, chat = sc.C, sc.targets[0], cert.chat
        r2 = chat.bounding_box()
        box = np.array(r2, dtype=float)
        P = halton_region(box, 10_000, lambda X: chat.contains_many(X) & ~Xr.contains_many(X), seed=101)
        inC = C.contains_many(P)
        v = cert.v.evaluate_many(P)
        Ev = np.where(inC, expect_v(cert, sc, np.where(inC[:, None], P, 0.0)), v)
        a = float((Ev - cert.lam * v).min())
        B = halton_region(box, 10_000, lambda X: chat.contains_many(X) & ~C.contains_many(X), seed=202)
        b = float(cert.v.evaluate_many(B).max())
        N = halton_region(np.array(C.bounding_box(), dtype=float), 100,
                          lambda X: C.contains_many(X) & ~Xr.contains_many(X) & stays(sc, X), seed=303)
        c = float((expect2_v(cert, sc, N) - cert.lam**2 * cert.v.evaluate_many(N)).min())
        ok &= a >= -1e-6 and b <= 1e-6 and c >= -1e-6 and len(N) == 100
        lines.append(f"{name} one-step {a:.1e} boundary {b:.1e} two-step {c:.1e}")
    report(3, ok, "; ".join(lines))


def test_4_hitting_time_bounds(report, scenarios, certificates):
    lines, ok, n = [], True, 0
    for name in EXAMPLES:
        sc, cert = scenarios[name], certificates[name]
        T, ET = hitting_bounds(cert, sc.x0)
        hits = []
        for seed in range(50):
            tr = run_episode(sc, cert, sc.targets[0], seed=seed)
            ok &= tr.outcome == HIT and tr.hit_time <= T
            hits.append(tr.hit_time if tr.hit_time is not None else math.inf)
            n += 1
        mean = float(np.mean(hits))
        ok &= mean <= ET + 1
        lines.append(f"{name} max {max(hits)} <= {T:.1f}, mean {mean:.1f} <= {ET + 1:.1f}")
    ok &= n >= 20
    report(4, ok, f"{n} episodes; " + "; ".join(lines))


def test_5_encoding_benchmark(report):
    rows = []
    for name in EXAMPLES:
        rows += bench_encodings(parse_scenario(name), [6, 8, 10], repeats=2)
    bad = bench_violations(rows, time_factor=1.25, var_factor=1.0)
    feasible = all(r.feasible for r in rows) and len(rows) == 18
    summary = ", ".join(f"{r.scenario[7:]}/d{r.degree}/{'t1' if r.encoding == THEOREM1 else 'p1'} {r.seconds:.2f}s"
                        for r in rows)
    report(5, feasible and not bad, ("; ".join(bad) + " | " if bad else "") + summary)


def test_6_svm_safe_set(report):
    env = Environment(200, 50, rects=[(0, 0, 200, 10), (0, 40, 200, 50)])
    scan = lidar_scan(env, (100, 25), n_rays=64, D=80.0)
    samples = generate_labels(scan, 8.0)
    model = train_svm(samples, c_plus=10.0, c_minus=1e12, degree=6)
    X = np.array([s.x for s in samples])
    y = np.array([s.y for s in samples])
    dec = model.decision(X)
    unsafe_in = int(np.sum((y < 0) & (dec >= 1.0)))
    h, _ = decision_polynomial(model)
    P = np.random.default_rng(6).uniform([20, 0], [180, 50], size=(100, 2))
    err = float(np.abs(h.evaluate_many(model.normalize(P)) - (1.0 - model.decision(P))).max())
    origin_dec = float(model.decision(np.array([[100.0, 25.0]]))[0])
    hit_dec = float(model.decision(scan.hit_points()).max())
    ok = unsafe_in == 0 and err <= 1e-8 and origin_dec >= 1.0 and hit_dec < 1.0
    report(6, ok, f"unsafe inside {unsafe_in}, expansion error {err:.1e}, origin {origin_dec:.3f}, "
                  f"max at hits {hit_dec:.3f}")


def test_7_mission(report):
    t0 = time.perf_counter()
    sc = parse_scenario("mission")
    env = sc.mission.environment
    legs = run_mission(sc, seed=0)
    hit = len(legs) == 2 and all(leg.trajectory.outcome == HIT for leg in legs)
    intr = sum(len(intrusions(env, leg.trajectory.states)) for leg in legs)
    nonpos = sum(int(np.sum(np.asarray(leg.trajectory.v[:-1]) <= 0)) for leg in legs)
    ref = run_reference(sc)
    ref_bad = bool(ref.info["intrusions"]) or not all(ref.info["targets_visited"])
    secs = time.perf_counter() - t0
    ok = hit and intr == 0 and nonpos == 0 and ref_bad and secs < 600 and sc.controller.p_omega == 3 and sc.lam == 1.01
    report(7, ok, f"legs {[leg.trajectory.hit_time for leg in legs]}, intrusions {intr}, v<=0 states {nonpos}; "
                  f"reference intrusions {len(ref.info['intrusions'])} visited {ref.info['targets_visited']}; "
                  f"{secs:.1f} s")


def test_8_sdp_solver(report, tmp_path, scenarios):
    one = solve(dense_sdp(np.array([[1.0]]), [np.array([[1.0]])], [1.0]))
    two = solve(dense_sdp(np.diag([1.0, 2.0]), [np.eye(2)], [1.0]))
    analytic = (one.status == OPTIMAL and abs(one.primal_objective - 1) < 1e-8
                and two.status == OPTIMAL and abs(two.primal_objective - 1) < 1e-8)
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(10):
        C, A, b = random_instance(rng)
        sol = solve(dense_sdp(C, A, b))
        obj, _, _ = admm_sdp(C, A, b)
        worst = max(worst, abs(sol.primal_objective - obj) / max(1.0, abs(obj)))
    sc = scenarios["example2"]
    from reachcert.sos import SosProgram, encode
    pr = sc.problem()
    form = encode(SosProgram(6, sc.lam, sc.eps, pr.safe, pr.target, pr.chat, pr.x0, pr.dynamics, pr.dist))
    export_sdpa(form, tmp_path / "a.dat-s")
    back = read_sdpa(tmp_path / "a.dat-s")
    export_sdpa(back, tmp_path / "b.dat-s")
    same = (tmp_path / "a.dat-s").read_bytes() == (tmp_path / "b.dat-s").read_bytes() and back.nnz() == form.nnz()
    report(8, analytic and worst <= 1e-5 and same, f"analytic {analytic}, random vs first-order worst {worst:.1e}, "
                                                     f"round trip {same}")


def test_cross_check_with_cvxpy():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(9)
    C, A, b = random_instance(rng)
    X = cp.Variable(C.shape, symmetric=True)
    prob = cp.Problem(cp.Minimize(cp.trace(C @ X)), [X >> 0] + [cp.trace(Ai @ X) == bi for Ai, bi in zip(A, b)])
    prob.solve()
    assert abs(solve(dense_sdp(C, A, b)).primal_objective - prob.value) <= 1e-5 * max(1.0, abs(prob.value))
