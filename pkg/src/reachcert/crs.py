"""Certificate pipeline: enlarged set, SOS solve, validation and hitting-time bounds."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from .expectation import ControlDistribution, DubinsPolar, DynamicsSpec, UniformBox, expected_step
from .poly import Polynomial, SemiAlgebraicSet, ball
from .sdp import SdpSolution, solve
from .sos import THEOREM1, SosProgram, encode, encode_nonnegativity, extract_free

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-6
BOUNDARY_TOL = 1e-6


class CertificateError(RuntimeError):
    """Raised when no valid certificate can be produced; carries what is known."""

    def __init__(self, message: str, report: ValidationReport | None = None, solution: SdpSolution | None = None):
        super().__init__(message)
        self.report = report
        self.solution = solution


class ChatError(RuntimeError):
    pass


@dataclass
class ReachAvoidProblem:
    """Sets, dynamics and start state of one reach-avoid query."""

    dynamics: DynamicsSpec
    dist: ControlDistribution
    safe: SemiAlgebraicSet
    target: SemiAlgebraicSet
    x0: Sequence[float]
    chat: SemiAlgebraicSet | None = None
    multiplier_degrees: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)


# -----------------------------------------------------------------------------
# low-discrepancy sampling


def control_box(dist: ControlDistribution) -> np.ndarray:
    """Box of raw control values the distribution is supported on, shape ``(m, 2)``."""
    if isinstance(dist, UniformBox):
        return np.array(dist.bounds, dtype=float)
    if isinstance(dist, DubinsPolar):
        return np.array([dist.v_range, (-math.pi, math.pi)], dtype=float)
    raise TypeError(f"no control box for {type(dist).__name__}")


def halton_in(box: np.ndarray, n: int, accept: Callable[[np.ndarray], np.ndarray] | None = None,
              seed: int = 0, max_draws: int = 10_000_000) -> np.ndarray:
    """First ``n`` points of a scrambled Halton sequence in ``box`` passing ``accept``."""
    box = np.asarray(box, dtype=float)
    sampler = qmc.Halton(d=len(box), scramble=True, seed=seed)
    out, drawn = [], 0
    got = 0
    batch = max(1024, 2 * n)
    while got < n:
        if drawn >= max_draws:
            raise ValueError(f"region too thin: {got} of {n} points after {drawn} draws")
        P = qmc.scale(sampler.random(batch), box[:, 0], box[:, 1])
        drawn += batch
        if accept is not None:
            P = P[accept(P)]
        out.append(P)
        got += len(P)
    return np.vstack(out)[:n]


# -----------------------------------------------------------------------------
# enlarged set


def compute_chat(C: SemiAlgebraicSet, f: DynamicsSpec, dist: ControlDistribution, margin: float = 0.1,
                 n_samples: int = 10_000, n_verify: int = 100_000, seed: int = 0,
                 center: Sequence[float] | None = None) -> SemiAlgebraicSet:
    """Ball around ``center`` (default origin) containing C and its one-step image."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    box_x = C.bounding_box()
    box_u = control_box(dist)
    n = f.n_state
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)

    def radius2(P):
        X, U = P[:, :n], P[:, n:]
        Y = f.evaluate_many(X, dist.atoms(U))
        return np.maximum(np.sum((Y - c) ** 2, axis=1), np.sum((X - c) ** 2, axis=1))

    accept = lambda P: C.contains_many(P[:, :n])
    P = halton_in(np.vstack([box_x, box_u]), n_samples, accept, seed=seed)
    r2 = (1.0 + margin) * float(radius2(P).max())

    # independent check on i.i.d. samples
    rng = np.random.default_rng(seed + 7919)
    X = box_x[:, 0] + (box_x[:, 1] - box_x[:, 0]) * rng.random((n_verify, n))
    X = X[C.contains_many(X)]
    U = dist.sample(rng, len(X))
    worst = float(radius2(np.hstack([X, U])).max()) if len(X) else 0.0
    if worst > r2:
        raise ChatError(f"enlarged set misses sampled images (radius^2 {worst:.6g} > {r2:.6g}); use a larger margin")
    return SemiAlgebraicSet([ball(c, math.sqrt(r2))])


def modified_step(x: Sequence[float], atoms: Sequence[float], C: SemiAlgebraicSet, X_r: SemiAlgebraicSet,
                  chat: SemiAlgebraicSet, f: DynamicsSpec) -> np.ndarray:
    """One step of the absorbing dynamics: ``f`` on C minus X_r, identity elsewhere in Ĉ."""
    x = np.asarray(x, dtype=float)
    if not chat.contains(x):
        raise ValueError("state lies outside the enlarged set")
    if C.contains(x) and not X_r.contains(x):
        return f.evaluate(x, atoms)
    return x.copy()


# -----------------------------------------------------------------------------
# certificate


@dataclass
class ValidationReport:
    n_samples: int
    one_step_min: float  # E[v(f^)] - lam v over chat minus X_r
    step_min: float  # E[v(f)] - lam v over C minus X_r
    boundary_max: float  # v over chat minus C
    v_x0: float
    eps: float
    two_step_min: float  # E[E[v]] - lam^2 v at nested points
    n_two_step: int
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_json(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    @classmethod
    def from_json(cls, d: dict) -> ValidationReport:
        d = dict(d)
        d.pop("passed", None)
        return cls(**d)


@dataclass
class Certificate:
    v: Polynomial
    lam: float
    eps: float
    chat: SemiAlgebraicSet
    M: float
    encoding: str = THEOREM1
    M_source: str = "sos"  # or "empirical"
    report: ValidationReport | None = None
    trivial: bool = False
    info: dict = field(default_factory=dict)

    def value(self, x) -> float:
        return float(self.v.evaluate(np.asarray(x, dtype=float)))

    def in_omega(self, x, C: SemiAlgebraicSet) -> bool:
        return C.contains(x) and self.value(x) > 0.0

    def to_json(self) -> dict:
        n = self.v.n_vars
        names = [f"x{i}" for i in range(n)]
        return {
            "n_vars": n,
            "v": [[list(m), c] for m, c in self.v.items()],
            "lambda": self.lam,
            "epsilon": self.eps,
            "M": self.M,
            "M_source": self.M_source,
            "chat": self.chat.to_strings(names),
            "encoding": self.encoding,
            "trivial": self.trivial,
            "report": None if self.report is None else self.report.to_json(),
            "info": self.info,
        }

    @classmethod
    def from_json(cls, d: dict) -> Certificate:
        from .poly import parse_polynomial

        n = int(d["n_vars"])
        names = [f"x{i}" for i in range(n)]
        v = Polynomial(n, {tuple(m): float(c) for m, c in d["v"]})
        chat = SemiAlgebraicSet([parse_polynomial(s, names=names) for s in d["chat"]])
        rep = None if d.get("report") is None else ValidationReport.from_json(d["report"])
        return cls(v=v, lam=float(d["lambda"]), eps=float(d["epsilon"]), chat=chat, M=float(d["M"]),
                   encoding=d.get("encoding", THEOREM1), M_source=d.get("M_source", "sos"), report=rep,
                   trivial=bool(d.get("trivial", False)), info=d.get("info", {}))


def hitting_bounds(cert: Certificate, x0: Sequence[float]) -> tuple[float, float]:
    """``(T_max, E_T_max)``: worst-case and expected hitting-time bounds from ``x0``."""
    if cert.trivial:
        return 0.0, 0.0
    v0 = cert.value(x0)
    if v0 <= 0:
        raise ValueError(f"v(x0) = {v0:.3g} is not positive; no bound available")
    T = math.log(cert.M / v0) / math.log(cert.lam)
    ET = (cert.M - v0) / ((cert.lam - 1.0) * v0)
    return T, ET


def sup_bound(v: Polynomial, chat: SemiAlgebraicSet, n_samples: int = 10_000, seed: int = 0) -> tuple[float, str]:
    """Upper bound on v over Ĉ: SOS-certified when possible, else sampled max x 1.05."""
    P = halton_in(chat.bounding_box(), n_samples, chat.contains_many, seed=seed + 1)
    sampled = float(v.evaluate_many(P).max())
    try:
        form = encode_nonnegativity(v, region=chat, free_constant=True)
        sol = solve(form)
        if sol.ok:
            M = float(sol.z[0])
            # the SOS value is exact up to the solver residual
            M += 1e-9 * max(1.0, abs(M))
            if M >= sampled:
                return M, "sos"
            log.warning("SOS bound %.6g below sampled max %.6g; using the sampled fallback", M, sampled)
        else:
            log.warning("SOS bound program ended with status %s", sol.status)
    except (ValueError, np.linalg.LinAlgError) as exc:
        log.warning("SOS bound failed: %s", exc)
    return 1.05 * sampled, "empirical"


def nested_points(problem: ReachAvoidProblem, n: int, seed: int = 0, n_probe: int = 64) -> np.ndarray:
    """Points of C minus X_r whose probed one-step images all stay in C minus X_r."""
    f, dist = problem.dynamics, problem.dist
    probe = dist.atoms(qmc.scale(qmc.Halton(len(control_box(dist)), scramble=True, seed=seed + 3).random(n_probe),
                                 control_box(dist)[:, 0], control_box(dist)[:, 1]))

    def accept(X):
        ok = problem.safe.contains_many(X) & ~problem.target.contains_many(X)
        for a in probe:
            Y = f.evaluate_many(X, np.tile(a, (len(X), 1)))
            ok &= problem.safe.contains_many(Y) & ~problem.target.contains_many(Y)
        return ok

    return halton_in(problem.safe.bounding_box(), n, accept, seed=seed + 5)


def two_step_values(v: Polynomial, f: DynamicsSpec, dist: ControlDistribution, X: np.ndarray) -> np.ndarray:
    """Exact ``E[E[v(f(f(x,u0),u1))]]`` at rows of X.

    The inner expectation is a polynomial from exact moments; the outer one
    integrates a polynomial in the control by a Gauss rule of sufficient order.
    """
    w1 = expected_step(v, f, dist)
    u_deg = max((sum(m[f.n_state:]) for p in f.components for m in p.monomials()), default=0)
    order = (w1.degree() * max(u_deg, 1)) // 2 + 2
    nodes, weights = dist.quadrature(order)
    out = np.zeros(len(X))
    for a, wgt in zip(nodes, weights):
        Y = f.evaluate_many(X, np.tile(a, (len(X), 1)))
        out += wgt * w1.evaluate_many(Y)
    return out


def validate(cert: Certificate, problem: ReachAvoidProblem, n_samples: int = 10_000, n_two_step: int = 100,
             seed: int = 0) -> ValidationReport:
    v, lam = cert.v, cert.lam
    C, X_r, chat = problem.safe, problem.target, cert.chat
    Ev = expected_step(v, problem.dynamics, problem.dist)
    box = chat.bounding_box()

    # one-step inequality with the absorbing dynamics on chat \ X_r
    P = halton_in(box, n_samples, lambda X: chat.contains_many(X) & ~X_r.contains_many(X), seed=seed)
    inC = C.contains_many(P)
    vals = v.evaluate_many(P)
    res = np.where(inC, Ev.evaluate_many(P) - lam * vals, (1.0 - lam) * vals)
    one_step_min = float(res.min())

    # pointwise program constraint on C \ X_r
    Q = halton_in(box, n_samples, lambda X: C.contains_many(X) & ~X_r.contains_many(X), seed=seed + 11)
    step_min = float((Ev.evaluate_many(Q) - lam * v.evaluate_many(Q)).min())

    # v must not be positive on chat \ C
    B = halton_in(box, n_samples, lambda X: chat.contains_many(X) & ~C.contains_many(X), seed=seed + 17)
    boundary_max = float(v.evaluate_many(B).max())

    v_x0 = cert.value(problem.x0)

    N = nested_points(problem, n_two_step, seed=seed)
    two = two_step_values(v, problem.dynamics, problem.dist, N) - lam**2 * v.evaluate_many(N)
    two_step_min = float(two.min()) if len(two) else math.inf

    checks = {
        "one_step": one_step_min >= -RESIDUAL_TOL,
        "step": step_min >= -RESIDUAL_TOL,
        "boundary": boundary_max <= BOUNDARY_TOL,
        "initial": v_x0 >= cert.eps,
        "two_step": two_step_min >= -RESIDUAL_TOL,
        "M_bound": cert.M >= float(vals.max()),
    }
    return ValidationReport(n_samples=n_samples, one_step_min=one_step_min, step_min=step_min,
                            boundary_max=boundary_max, v_x0=v_x0, eps=cert.eps, two_step_min=two_step_min,
                            n_two_step=len(N), checks=checks)


def compute_certificate(problem: ReachAvoidProblem, v_degree: int = 6, lam: float = 1.01, eps: float = 1e-6,
                        encoding: str = THEOREM1, paper_exact: bool = False, chat_margin: float = 0.1,
                        seed: int = 0, n_samples: int = 10_000) -> Certificate:
    """Solve for a certificate, bound it and validate it; raises ``CertificateError`` on failure."""
    x0 = problem.x0
    if problem.target.contains(x0):
        # already in the target: nothing to certify
        chat = problem.chat or SemiAlgebraicSet([ball(x0, 1.0)])
        return Certificate(v=Polynomial.constant(len(x0), 1.0), lam=lam, eps=eps, chat=chat, M=1.0,
                           encoding=encoding, M_source="trivial", trivial=True)
    if not problem.safe.contains(x0):
        raise CertificateError("initial state lies outside the safe set")
    chat = problem.chat
    if chat is None:
        chat = compute_chat(problem.safe, problem.dynamics, problem.dist, margin=chat_margin, seed=seed)
    prog = SosProgram(v_degree=v_degree, lam=lam, eps=eps, safe=problem.safe, target=problem.target, chat=chat,
                      x0=x0, dynamics=problem.dynamics, dist=problem.dist, encoding=encoding,
                      paper_exact=paper_exact, multiplier_degrees=dict(problem.multiplier_degrees))
    t0 = time.perf_counter()
    form = encode(prog)
    t1 = time.perf_counter()
    sol = solve(form)
    t2 = time.perf_counter()
    log.info("certificate SDP: %d rows, %d variables, status %s after %d iterations (%.2fs)",
             form.n_rows, form.n_scalar_vars, sol.status, sol.iterations, t2 - t1)
    if not sol.ok:
        raise CertificateError(f"SDP {sol.status} at degree {v_degree}: {sol.message}", solution=sol)
    v = extract_free(form, sol, "v")
    M, source = sup_bound(v, chat, n_samples=n_samples, seed=seed)
    cert = Certificate(v=v, lam=lam, eps=eps, chat=chat, M=M, encoding=encoding, M_source=source,
                       info={"encode_seconds": t1 - t0, "solve_seconds": t2 - t1, "iterations": sol.iterations,
                             "rows": form.n_rows, "variables": form.n_scalar_vars})
    cert.report = validate(cert, problem, n_samples=n_samples, seed=seed)
    if not cert.report.passed:
        failed = [k for k, ok in cert.report.checks.items() if not ok]
        raise CertificateError(f"certificate failed validation: {', '.join(failed)}", report=cert.report)
    return cert
