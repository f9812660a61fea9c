"""Gram-matrix encodings of the certificate conditions as block SDPs.

Each polynomial identity ``sum(terms) == 0`` becomes one equality row per
monomial in its support. Unknown polynomials (``v``, ``w``) are free
variables, one per basis coefficient; SOS polynomials are PSD Gram blocks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expectation import ControlDistribution, DynamicsSpec, ExpectedImages
from .poly import Polynomial, SemiAlgebraicSet, basis, glex_key
from .sdp import SdpSolution, SdpStandardForm

THEOREM1 = "theorem1"
PROP1 = "prop1"


class EncodingError(ValueError):
    pass


@dataclass
class SosProgram:
    """Data of one certificate search.

    ``safe`` is C (constraints ``h_1..h_l``), ``target`` is X_r
    (``g_1..g_k``) and ``chat`` is the single-constraint enlargement
    ``{h_0 <= 0}``.
    """

    v_degree: int
    lam: float
    eps: float
    safe: SemiAlgebraicSet
    target: SemiAlgebraicSet
    chat: SemiAlgebraicSet
    x0: Sequence[float]
    dynamics: DynamicsSpec
    dist: ControlDistribution
    encoding: str = THEOREM1
    paper_exact: bool = False
    multiplier_degrees: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)

    def validate(self) -> None:
        if self.v_degree < 2 or self.v_degree % 2:
            raise EncodingError(f"v_degree must be even and >= 2, got {self.v_degree}")
        if self.encoding == THEOREM1 and not self.lam > 1.0:
            raise EncodingError(f"lambda must exceed 1, got {self.lam}")
        if self.eps <= 0:
            raise EncodingError("epsilon must be positive")
        if len(self.chat) != 1:
            raise EncodingError("the enlarged set must be given by a single constraint")
        for name, s in (("safe", self.safe), ("target", self.target), ("chat", self.chat)):
            if not len(s):
                raise EncodingError(f"empty {name} set")
            if s.n_vars != self.dynamics.n_state:
                raise EncodingError(f"{name} set is over the wrong number of variables")
        if self.x0.shape != (self.dynamics.n_state,):
            raise EncodingError("x0 has the wrong dimension")
        for key, d in self.multiplier_degrees.items():
            if d < 0 or d % 2:
                raise EncodingError(f"multiplier degree for {key} must be even and >= 0")
        try:
            self.chat.bounding_box()
        except ValueError as exc:
            raise EncodingError("the enlarged set must be bounded (a ball or carry a box)") from exc

    def multiplier_degree(self, family: str, key: str, constraint: Polynomial) -> int:
        if key in self.multiplier_degrees:
            return int(self.multiplier_degrees[key])
        if family in self.multiplier_degrees:
            return int(self.multiplier_degrees[family])
        d = self.v_degree - constraint.degree()
        return max(0, d - d % 2)


# -----------------------------------------------------------------------------


class _Encoder:
    """Accumulates free groups, Gram blocks and identities, then emits the SDP."""

    def __init__(self, n_vars: int):
        self.n = n_vars
        self.free_groups: dict[str, dict] = {}
        self.n_free = 0
        self.blocks: list[dict] = []
        self.identities: list[dict] = []
        self.linear_rows: list[dict] = []

    def free_group(self, name: str, degree: int) -> str:
        monos = basis(self.n, degree)
        self.free_groups[name] = {"offset": self.n_free, "basis": monos}
        self.n_free += len(monos)
        return name

    def block(self, label: str, half_degree: int) -> int:
        self.blocks.append({"label": label, "basis": basis(self.n, half_degree)})
        return len(self.blocks) - 1

    def identity(self, label: str, terms: list[tuple]) -> dict:
        """Terms (all summed to zero):

        ``("free", group, polys)``   sum_k coef_k * polys[k]
        ``("gram", block, q, sign)``  sign * q * (z^T G z)
        ``("const", p)``             a known polynomial
        """
        ident = {"label": label, "terms": terms}
        self.identities.append(ident)
        return ident

    def sos_remainder(self, label: str, terms: list[tuple]) -> dict:
        """Identity ``sum(terms) - sigma == 0`` with ``sigma`` sized to fit."""
        d = 0
        for t in terms:
            if t[0] == "free":
                d = max(d, max((p.degree() for p in t[2]), default=0))
            elif t[0] == "gram":
                blk = self.blocks[t[1]]
                d = max(d, 2 * max(sum(m) for m in blk["basis"]) + t[2].degree())
            elif t[0] == "const":
                d = max(d, t[1].degree())
        half = math.ceil(d / 2)
        b = self.block(f"sigma[{label}]", half)
        one = Polynomial.constant(self.n, 1.0)
        return self.identity(label, terms + [("gram", b, one, -1.0)])

    def multiplier(self, label: str, degree: int, q: Polynomial, sign: float) -> tuple:
        b = self.block(label, degree // 2)
        return ("gram", b, q, sign)

    def linear(self, label: str, free: list[tuple[int, float]], slack_sign: float, rhs: float) -> None:
        """``sum coef*z + slack_sign * t = rhs`` with a fresh 1x1 slack block ``t``."""
        b = self.block(f"slack[{label}]", 0)
        self.linear_rows.append({"label": label, "free": free, "slack": b, "sign": slack_sign, "rhs": rhs})

    def build(self) -> SdpStandardForm:
        rows_rhs: list[float] = []
        row_labels: list[str] = []
        block_entries: list[list] = [[] for _ in self.blocks]
        free_entries: list = []

        for ident in self.identities:
            acc_free: dict = {}
            acc_gram: dict = {}
            const: dict = {}
            for t in ident["terms"]:
                if t[0] == "free":
                    off = self.free_groups[t[1]]["offset"]
                    for k, p in enumerate(t[2]):
                        for m, c in p.items():
                            key = (m, off + k)
                            acc_free[key] = acc_free.get(key, 0.0) + c
                elif t[0] == "gram":
                    _, b, q, sign = t
                    z = self.blocks[b]["basis"]
                    for a in range(len(z)):
                        for bb in range(a, len(z)):
                            zab = tuple(x + y for x, y in zip(z[a], z[bb]))
                            for m, c in q.items():
                                alpha = tuple(x + y for x, y in zip(zab, m))
                                key = (alpha, b, a, bb)
                                acc_gram[key] = acc_gram.get(key, 0.0) + sign * c
                elif t[0] == "const":
                    for m, c in t[1].items():
                        const[m] = const.get(m, 0.0) + c
                else:
                    raise EncodingError(f"unknown term kind {t[0]}")
            support = {k[0] for k in acc_free} | {k[0] for k in acc_gram} | set(const)
            monos = sorted(support, key=glex_key)
            row_of = {}
            for m in monos:
                row_of[m] = len(rows_rhs)
                rows_rhs.append(-const.get(m, 0.0))
                row_labels.append(f"{ident['label']}:{m}")
            ident["rows"] = [row_of[m] for m in monos]
            ident["monomials"] = monos
            for (m, col), c in acc_free.items():
                if c != 0.0:
                    free_entries.append((row_of[m], col, c))
            for (m, b, a, bb), c in acc_gram.items():
                if c != 0.0:
                    block_entries[b].append((row_of[m], a, bb, c))

        for lin in self.linear_rows:
            r = len(rows_rhs)
            rows_rhs.append(lin["rhs"])
            row_labels.append(lin["label"])
            lin["row"] = r
            for col, c in lin["free"]:
                if c != 0.0:
                    free_entries.append((r, col, c))
            block_entries[lin["slack"]].append((r, 0, 0, lin["sign"]))

        free_labels = []
        for name, g in self.free_groups.items():
            free_labels += [f"{name}:{m}" for m in g["basis"]]
        return SdpStandardForm(
            block_dims=[len(b["basis"]) for b in self.blocks],
            rhs=np.array(rows_rhs),
            block_entries=block_entries,
            free_entries=free_entries,
            n_free=self.n_free,
            row_labels=row_labels,
            block_labels=[b["label"] for b in self.blocks],
            free_labels=free_labels,
            variable_map={
                "n_vars": self.n,
                "free_groups": self.free_groups,
                "blocks": self.blocks,
                "identities": self.identities,
                "linear_rows": self.linear_rows,
            },
        )


def _monomial_polys(monos, n) -> list[Polynomial]:
    return [Polynomial.monomial(m) for m in monos]


def _free_terms(enc: _Encoder, group: str, transform) -> tuple:
    monos = enc.free_groups[group]["basis"]
    return ("free", group, [transform(m) for m in monos])


def encode_theorem1(prog: SosProgram) -> SdpStandardForm:
    """Encode ``E[v(f)] - lam*v >= 0`` on C minus X_r, ``v <= 0`` on Chat minus C, ``v(x0) >= eps``."""
    if prog.encoding != THEOREM1:
        raise EncodingError("program is not marked for the theorem1 encoding")
    prog.validate()
    n = prog.dynamics.n_state
    enc = _Encoder(n)
    enc.free_group("v", prog.v_degree)
    E = ExpectedImages(prog.dynamics, prog.dist)
    lam = prog.lam
    step_term = _free_terms(enc, "v", lambda m: E(m) - Polynomial.monomial(m).scale(lam))
    neg_v = _free_terms(enc, "v", lambda m: -Polynomial.monomial(m))
    hs = prog.safe.constraints
    gs = prog.target.constraints
    h0 = prog.chat.constraints[0]

    for j, gj in enumerate(gs):
        terms = [step_term]
        for i, hi in enumerate(hs):
            key = f"s0[{j},{i}]"
            terms.append(enc.multiplier(key, prog.multiplier_degree("s0", key, hi), hi, +1.0))
        key = f"s1[{j}]"
        terms.append(enc.multiplier(key, prog.multiplier_degree("s1", key, gj), gj, -1.0))
        if prog.paper_exact:
            for i, gi in enumerate(gs):
                if i != j:
                    key = f"s1x[{j},{i}]"
                    terms.append(enc.multiplier(key, prog.multiplier_degree("s1x", key, gi), gi, +1.0))
        enc.sos_remainder(f"decrease[{j}]", terms)

    for j, hj in enumerate(hs):
        key2, key3 = f"s2[{j}]", f"s3[{j}]"
        terms = [
            neg_v,
            enc.multiplier(key2, prog.multiplier_degree("s2", key2, h0), h0, +1.0),
            enc.multiplier(key3, prog.multiplier_degree("s3", key3, hj), hj, -1.0),
        ]
        if prog.paper_exact:
            for i, hi in enumerate(hs):
                if i != j:
                    key = f"s4[{j},{i}]"
                    terms.append(enc.multiplier(key, prog.multiplier_degree("s4", key, hi), hi, +1.0))
        enc.sos_remainder(f"outside[{j}]", terms)

    _initial_row(enc, prog)
    return enc.build()


def encode_prop1(prog: SosProgram) -> SdpStandardForm:
    """Encode the two-function baseline (``v`` and an auxiliary ``w``) piecewise over the regions of the absorbing dynamics."""
    if prog.encoding != PROP1:
        raise EncodingError("program is not marked for the prop1 encoding")
    prog.validate()
    n = prog.dynamics.n_state
    enc = _Encoder(n)
    enc.free_group("v", prog.v_degree)
    enc.free_group("w", prog.v_degree)
    E = ExpectedImages(prog.dynamics, prog.dist)
    hs = prog.safe.constraints
    gs = prog.target.constraints
    h0 = prog.chat.constraints[0]
    v_step = _free_terms(enc, "v", lambda m: E(m) - Polynomial.monomial(m))
    w_step = _free_terms(enc, "w", lambda m: E(m) - Polynomial.monomial(m))
    neg_v = _free_terms(enc, "v", lambda m: -Polynomial.monomial(m))

    # on C \ X_r the modified dynamics coincide with f
    for tag, head in (("a", [v_step]), ("b", [w_step, neg_v])):
        for j, gj in enumerate(gs):
            terms = list(head)
            for i, hi in enumerate(hs):
                key = f"s0{tag}[{j},{i}]"
                terms.append(enc.multiplier(key, prog.multiplier_degree("s0", key, hi), hi, +1.0))
            key = f"s1{tag}[{j}]"
            terms.append(enc.multiplier(key, prog.multiplier_degree("s1", key, gj), gj, -1.0))
            if prog.paper_exact:
                for i, gi in enumerate(gs):
                    if i != j:
                        key = f"s1x{tag}[{j},{i}]"
                        terms.append(enc.multiplier(key, prog.multiplier_degree("s1x", key, gi), gi, +1.0))
            enc.sos_remainder(f"{'martingale' if tag == 'a' else 'bound'}[{j}]", terms)

    # on X_r the dynamics are the identity: v <= 1
    terms = [neg_v, ("const", Polynomial.constant(n, 1.0))]
    for i, gi in enumerate(gs):
        key = f"s5[{i}]"
        terms.append(enc.multiplier(key, prog.multiplier_degree("s5", key, gi), gi, +1.0))
    enc.sos_remainder("target_cap", terms)

    # on Chat \ C the dynamics are the identity: v <= 0
    for j, hj in enumerate(hs):
        key2, key3 = f"s2[{j}]", f"s3[{j}]"
        terms = [
            neg_v,
            enc.multiplier(key2, prog.multiplier_degree("s2", key2, h0), h0, +1.0),
            enc.multiplier(key3, prog.multiplier_degree("s3", key3, hj), hj, -1.0),
        ]
        if prog.paper_exact:
            for i, hi in enumerate(hs):
                if i != j:
                    key = f"s4[{j},{i}]"
                    terms.append(enc.multiplier(key, prog.multiplier_degree("s4", key, hi), hi, +1.0))
        enc.sos_remainder(f"outside[{j}]", terms)

    _initial_row(enc, prog)
    return enc.build()


def _initial_row(enc: _Encoder, prog: SosProgram) -> None:
    g = enc.free_groups["v"]
    x0 = prog.x0
    free = [(g["offset"] + k, float(np.prod(x0 ** np.array(m)))) for k, m in enumerate(g["basis"])]
    enc.linear("initial", free, -1.0, prog.eps)


def encode(prog: SosProgram) -> SdpStandardForm:
    if prog.encoding == THEOREM1:
        return encode_theorem1(prog)
    if prog.encoding == PROP1:
        return encode_prop1(prog)
    raise EncodingError(f"unknown encoding {prog.encoding!r}")


def encode_nonnegativity(q: Polynomial, region: SemiAlgebraicSet | None = None,
                         multiplier_degree: int | None = None,
                         free_constant: bool = False) -> SdpStandardForm:
    """Certify ``q >= 0`` (on ``region`` when given) with a Putinar-style identity.

    With ``free_constant`` the program instead minimises a free scalar ``M``
    subject to ``M - q >= 0``; the optimal ``M`` bounds ``q`` from above.
    """
    n = q.n_vars
    enc = _Encoder(n)
    terms: list[tuple] = []
    if free_constant:
        enc.free_group("M", 0)
        terms.append(("free", "M", [Polynomial.constant(n, 1.0)]))
        terms.append(("const", -q))
    else:
        terms.append(("const", q))
    if region is not None:
        for i, p in enumerate(region.constraints):
            if multiplier_degree is None:
                d = max(q.degree(), 2) - p.degree()
                d = max(0, d - d % 2)
            else:
                d = multiplier_degree
            terms.append(enc.multiplier(f"s[{i}]", d, p, +1.0))
    enc.sos_remainder("nonneg", terms)
    form = enc.build()
    if free_constant:
        form.free_cost = np.array([1.0])
    return form


# -----------------------------------------------------------------------------
# reading solutions back


def extract_free(form: SdpStandardForm, sol: SdpSolution, group: str) -> Polynomial:
    g = form.variable_map["free_groups"][group]
    n = form.variable_map["n_vars"]
    coeffs = sol.z[g["offset"] : g["offset"] + len(g["basis"])]
    return Polynomial(n, {m: c for m, c in zip(g["basis"], coeffs)})


def gram_polynomial(form: SdpStandardForm, sol: SdpSolution, block: int) -> Polynomial:
    z = form.variable_map["blocks"][block]["basis"]
    n = form.variable_map["n_vars"]
    G = sol.X[block]
    out: dict = {}
    for a in range(len(z)):
        for b in range(len(z)):
            m = tuple(x + y for x, y in zip(z[a], z[b]))
            out[m] = out.get(m, 0.0) + G[a, b]
    return Polynomial(n, out)


def identity_residuals(form: SdpStandardForm, sol: SdpSolution) -> dict[str, float]:
    """Rebuild every encoded identity with polynomial arithmetic; max |coefficient| each."""
    vm = form.variable_map
    n = vm["n_vars"]
    out = {}
    for ident in vm["identities"]:
        total = Polynomial.zero(n)
        for t in ident["terms"]:
            if t[0] == "free":
                g = vm["free_groups"][t[1]]
                coeffs = sol.z[g["offset"] : g["offset"] + len(g["basis"])]
                for c, p in zip(coeffs, t[2]):
                    total = total + p.scale(c)
            elif t[0] == "gram":
                _, b, q, sign = t
                total = total + (q * gram_polynomial(form, sol, b)).scale(sign)
            else:
                total = total + t[1]
        out[ident["label"]] = total.max_abs_coeff()
    for lin in vm["linear_rows"]:
        val = sum(c * sol.z[col] for col, c in lin["free"]) + lin["sign"] * sol.X[lin["slack"]][0, 0]
        out[lin["label"]] = abs(val - lin["rhs"])
    return out


def gram_min_eigenvalues(form: SdpStandardForm, sol: SdpSolution) -> dict[str, float]:
    return {
        b["label"]: float(np.linalg.eigvalsh(sol.X[k])[0])
        for k, b in enumerate(form.variable_map.get("blocks", []))
    }
