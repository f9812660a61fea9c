"""Safe-set learning from range scans with a biased-penalty polynomial-kernel SVM."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .poly import Polynomial, SemiAlgebraicSet, ball

SAFE, UNSAFE = 1, -1
INSETS = (0.5, 0.9)
MIN_RAYS = 8


class SvmError(RuntimeError):
    pass


@dataclass
class SensorScan:
    origin: np.ndarray
    ray_angles: np.ndarray
    hit_distance: np.ndarray  # inf where nothing is hit within range
    max_range: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.ray_angles = np.asarray(self.ray_angles, dtype=float)
        self.hit_distance = np.asarray(self.hit_distance, dtype=float)
        if len(self.ray_angles) != len(self.hit_distance):
            raise ValueError("ray_angles and hit_distance differ in length")
        if len(self.ray_angles) == 0:
            raise ValueError("empty scan")
        if len(self.ray_angles) < MIN_RAYS:
            raise ValueError(f"a scan needs at least {MIN_RAYS} rays")
        if np.any(~(self.hit_distance > 0)):
            raise ValueError("hit distances must be positive")

    def hit_points(self) -> np.ndarray:
        hit = self.hit_distance < self.max_range
        d = self.hit_distance[hit]
        a = self.ray_angles[hit]
        return self.origin + np.column_stack([d * np.cos(a), d * np.sin(a)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["angle", "distance"])
            for a, d in zip(self.ray_angles, self.hit_distance):
                w.writerow([repr(float(a)), "inf" if not np.isfinite(d) else repr(float(d))])

    @classmethod
    def from_csv(cls, path, max_range: float, origin: Sequence[float] = (0.0, 0.0)) -> SensorScan:
        angles, dists = [], []
        with open(path, newline="") as fh:
            rows = csv.reader(fh)
            header = next(rows, None)
            if header is None or [h.strip() for h in header] != ["angle", "distance"]:
                raise ValueError(f"{path}: expected header 'angle,distance'")
            for lineno, row in enumerate(rows, 2):
                if not row:
                    continue
                try:
                    angles.append(float(row[0]))
                    dists.append(float(row[1]))
                except (IndexError, ValueError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad row {row!r}") from exc
        return cls(np.asarray(origin, dtype=float), np.array(angles), np.array(dists), float(max_range))


@dataclass(frozen=True)
class LabeledSample:
    x: tuple
    y: int  # +1 safe, -1 unsafe


def as_arrays(samples: Sequence[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([s.x for s in samples], dtype=float)
    y = np.array([s.y for s in samples], dtype=float)
    return X, y


def generate_labels(scan: SensorScan, delta: float, insets: Sequence[float] = INSETS) -> list[LabeledSample]:
    """Unsafe at hits (safe insets before them); safe at range and unsafe just beyond when clear."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if len(scan.ray_angles) == 0:
        raise ValueError("empty scan")
    pts, labels = [scan.origin.copy()], [SAFE]
    D = scan.max_range
    for a, r in zip(scan.ray_angles, scan.hit_distance):
        d = np.array([math.cos(a), math.sin(a)])
        if r < D:
            pts.append(scan.origin + r * d)
            labels.append(UNSAFE)
            for t in insets:
                pts.append(scan.origin + t * r * d)
                labels.append(SAFE)
        else:
            pts.append(scan.origin + D * d)
            labels.append(SAFE)
            pts.append(scan.origin + (D + delta) * d)
            labels.append(UNSAFE)
    return [LabeledSample(tuple(float(c) for c in p), lab) for p, lab in zip(pts, labels)]


@dataclass
class SvmModel:
    """``decision(x) = sum_i coef_i (<z_i, z(x)> + 1)^degree + b`` with ``z = (x - center) / scale``."""

    support: np.ndarray  # normalized coordinates
    coef: np.ndarray  # alpha_i y_i
    b: float
    degree: int
    center: np.ndarray
    scale: float
    c_plus: float
    c_minus: float
    kkt_violation: float = 0.0
    iterations: int = 0
    objective_history: list = field(default_factory=list, repr=False)

    @property
    def sigma(self) -> float:
        """Kernel scale in scene units."""
        return self.scale

    def normalize(self, X: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(X) - self.center) / self.scale

    def decision(self, X: np.ndarray) -> np.ndarray:
        K = (self.normalize(X) @ self.support.T + 1.0) ** self.degree
        return K @ self.coef + self.b

    def to_json(self) -> dict:
        return {
            "kernel": {"kind": "polynomial", "degree": self.degree, "sigma": self.scale},
            "center": self.center.tolist(),
            "scale": self.scale,
            "support": self.support.tolist(),
            "coef": self.coef.tolist(),
            "b": self.b,
            "c_plus": self.c_plus,
            "c_minus": self.c_minus,
            "kkt_violation": self.kkt_violation,
            "iterations": self.iterations,
        }

    @classmethod
    def from_json(cls, d: dict) -> SvmModel:
        if d.get("kernel", {}).get("kind", "polynomial") != "polynomial":
            raise ValueError("only polynomial kernels are supported")
        return cls(support=np.array(d["support"], dtype=float).reshape(-1, len(d["center"])),
                   coef=np.array(d["coef"], dtype=float), b=float(d["b"]), degree=int(d["kernel"]["degree"]),
                   center=np.array(d["center"], dtype=float), scale=float(d["scale"]),
                   c_plus=float(d["c_plus"]), c_minus=float(d["c_minus"]),
                   kkt_violation=float(d.get("kkt_violation", 0.0)), iterations=int(d.get("iterations", 0)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> SvmModel:
        return cls.from_json(json.loads(Path(path).read_text()))


def _smo(Q: np.ndarray, y: np.ndarray, Cs: np.ndarray, tol: float, max_iter: int, history: list):
    """Minimise ``a^T Q a / 2 - sum(a)`` over ``0 <= a <= Cs``, ``y.a = 0``.

    Working pairs are chosen by maximal violation with second-order gain, as in
    LIBSVM. Returns ``(alpha, gradient, violation, iterations)``.
    """
    n = len(y)
    alpha = np.zeros(n)
    G = -np.ones(n)
    tau = 1e-12
    diag = np.diag(Q)
    it = 0
    gap = math.inf
    while True:
        up = ((y > 0) & (alpha < Cs)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < Cs))
        score = -y * G
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.argmax(np.where(up, score, -np.inf)))
        m_up = score[i]
        m_low = float(np.min(np.where(low, score, np.inf)))
        gap = m_up - m_low
        if gap <= tol:
            break
        if it >= max_iter:
            raise SvmError(f"SMO did not converge in {max_iter} iterations; KKT violation {gap:.3e}")
        # second-order choice of j among violating low indices
        b = m_up - score
        cand = low & (b > 0)
        a = diag[i] + diag - 2.0 * y[i] * y * Q[i]
        a = np.where(a > 0, a, tau)
        gain = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(gain))
        # analytic two-variable update
        # move along d_i = y_i t, d_j = -y_j t, which keeps y.a fixed
        quad = max(Q[i, i] + Q[j, j] - 2.0 * y[i] * y[j] * Q[i, j], tau)
        step = (-y[i] * G[i] + y[j] * G[j]) / quad
        lo_i, hi_i = -alpha[i], Cs[i] - alpha[i]
        lo_j, hi_j = -alpha[j], Cs[j] - alpha[j]
        t_lo, t_hi = -math.inf, math.inf
        for d_lo, d_hi, s in ((lo_i, hi_i, y[i]), (lo_j, hi_j, -y[j])):
            if s > 0:
                t_lo, t_hi = max(t_lo, d_lo), min(t_hi, d_hi)
            else:
                t_lo, t_hi = max(t_lo, -d_hi), min(t_hi, -d_lo)
        t = min(max(step, t_lo), t_hi)
        old_i, old_j = alpha[i], alpha[j]
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        if t in (t_lo, t_hi):
            # land exactly on the bound that clipped the step
            for k, old in ((i, old_i), (j, old_j)):
                slack = 1e-12 * (abs(old) + abs(t))
                if abs(alpha[k]) <= slack:
                    alpha[k] = 0.0
                elif abs(alpha[k] - Cs[k]) <= slack:
                    alpha[k] = Cs[k]
        di, dj = alpha[i] - old_i, alpha[j] - old_j
        G += Q[:, i] * di + Q[:, j] * dj
        if it % 1000 == 999:
            G = Q @ alpha - 1.0  # refresh against accumulated rounding
        it += 1
        if history is not None and it % 50 == 0:
            history.append(float(alpha.sum() - 0.5 * alpha @ (G + 1.0)))
    if history is not None:
        history.append(float(alpha.sum() - 0.5 * alpha @ (G + 1.0)))
    return alpha, G, gap, it


def train_svm(samples: Sequence[LabeledSample], c_plus: float = 10.0, c_minus: float = 1e12, degree: int = 6,
              tol: float = 1e-3, max_iter: int = 2_000_000, center: Sequence[float] | None = None,
              scale: float | None = None) -> SvmModel:
    """Biased-penalty soft-margin SVM with an inhomogeneous polynomial kernel.

    Samples are mapped to ``[-1, 1]^n`` (centre and half-width of their bounding
    box unless given) before training.
    """
    X, y = as_arrays(samples)
    if len(y) == 0:
        raise SvmError("no samples")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SvmError("both classes must be present")
    if c_plus <= 0 or c_minus <= 0:
        raise ValueError("penalties must be positive")
    lo, hi = X.min(axis=0), X.max(axis=0)
    c = (lo + hi) / 2 if center is None else np.asarray(center, dtype=float)
    s = float(np.max(np.abs(X - c))) if scale is None else float(scale)
    Z = (X - c) / s
    K = (Z @ Z.T + 1.0) ** degree
    Q = (y[:, None] * y[None, :]) * K
    Cs = np.where(y > 0, c_plus, c_minus)
    history: list = []
    alpha, G, gap, it = _smo(Q, y, Cs, tol, max_iter, history)
    free = (alpha > 0) & (alpha < Cs)
    if np.any(free):
        b = float(np.mean(-y[free] * G[free]))
    else:
        up = ((y > 0) & (alpha < Cs)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < Cs))
        sc = -y * G
        b = float((sc[up].max() + sc[low].min()) / 2)
    sv = alpha > 0
    return SvmModel(support=Z[sv], coef=(alpha * y)[sv], b=b, degree=degree, center=c, scale=s, c_plus=c_plus,
                    c_minus=c_minus, kkt_violation=gap, iterations=it, objective_history=history)


def decision_polynomial(model: SvmModel, frame: tuple | None = None) -> tuple[Polynomial, SemiAlgebraicSet]:
    """Expand the decision function; returns ``h = 1 - decision`` and ``{h <= 0}``.

    The polynomial is in frame coordinates ``xi`` with ``x = origin + scale * xi``
    for ``frame = (origin, scale)``; the default frame is the training
    normalisation, so ``model.normalize`` maps scene points into it. Raw scene
    coordinates are ``frame = (0, 1)``, but there the degree-d coefficients
    shrink like ``scale**-d`` and fall under the coefficient prune threshold.
    """
    n = model.support.shape[1]
    xs = Polynomial.variables(n)
    if frame is None:
        origin, fs = model.center, model.scale
    else:
        origin, fs = np.asarray(frame[0], dtype=float), float(frame[1])
    # z = (origin + fs * xi - center) / scale, affine in the frame variables
    off = (origin - model.center) / model.scale
    z = [xs[k].scale(fs / model.scale) + float(off[k]) for k in range(n)]
    total = Polynomial.constant(n, model.b)
    for sv, cf in zip(model.support, model.coef):
        lin = Polynomial.constant(n, 1.0)
        for k in range(n):
            lin = lin + z[k].scale(float(sv[k]))
        total = total + (lin**model.degree).scale(float(cf))
    h = 1.0 - total
    return h, SemiAlgebraicSet([h])


def learned_safe_set(model: SvmModel, origin: Sequence[float], radius: float) -> SemiAlgebraicSet:
    """Learned set cut to the scan disc, in frame coordinates ``xi = (x - origin) / radius``."""
    h, _ = decision_polynomial(model, frame=(origin, radius))
    disc = ball(np.zeros(len(origin)), 1.0)
    return SemiAlgebraicSet([h, disc], box=[[-1.0, 1.0]] * len(origin))
