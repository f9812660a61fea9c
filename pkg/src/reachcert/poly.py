"""Sparse multivariate polynomials over float coefficients.

Polynomials are immutable maps from exponent tuples to coefficients. Every
operation prunes coefficients below ``PRUNE_TOL`` and terms are always
iterated in graded-lex order, so anything built from them (SDP rows, JSON
dumps) is reproducible run to run.
"""
from __future__ import annotations

import math
import re
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

PRUNE_TOL = 1e-12

Monomial = tuple  # tuple[int, ...]


class DimensionError(ValueError):
    """Operands live in different variable spaces."""


def glex_key(m: Monomial) -> tuple:
    # x0 > x1 > ... within a degree, so basis(2, 1) is [1, x0, x1]
    return (sum(m), tuple(-e for e in m))


def basis(n_vars: int, max_degree: int) -> list[Monomial]:
    """All monomials of total degree <= ``max_degree`` in graded-lex order."""
    if max_degree < 0:
        raise ValueError("max_degree must be non-negative")
    out = []
    for d in range(max_degree + 1):
        for combo in combinations_with_replacement(range(n_vars), d):
            e = [0] * n_vars
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    out.sort(key=glex_key)
    return out


def _add_exp(a: Monomial, b: Monomial) -> Monomial:
    return tuple(x + y for x, y in zip(a, b))


class Polynomial:
    __slots__ = ("n_vars", "_terms", "_arrays")

    def __init__(self, n_vars: int, terms: Mapping[Monomial, float] | None = None):
        self.n_vars = int(n_vars)
        clean = {}
        for m, c in (terms or {}).items():
            m = tuple(int(e) for e in m)
            if len(m) != self.n_vars:
                raise DimensionError(f"monomial {m} has wrong length for {n_vars} variables")
            if any(e < 0 for e in m):
                raise ValueError(f"negative exponent in {m}")
            c = float(c)
            if abs(c) >= PRUNE_TOL:
                clean[m] = c
        self._terms = dict(sorted(clean.items(), key=lambda kv: glex_key(kv[0])))
        self._arrays = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, n_vars: int, c: float) -> Polynomial:
        return cls(n_vars, {(0,) * n_vars: c})

    @classmethod
    def zero(cls, n_vars: int) -> Polynomial:
        return cls(n_vars)

    @classmethod
    def variable(cls, n_vars: int, i: int) -> Polynomial:
        e = [0] * n_vars
        e[i] = 1
        return cls(n_vars, {tuple(e): 1.0})

    @classmethod
    def monomial(cls, m: Monomial, c: float = 1.0) -> Polynomial:
        return cls(len(m), {tuple(m): c})

    @classmethod
    def variables(cls, n_vars: int) -> list[Polynomial]:
        return [cls.variable(n_vars, i) for i in range(n_vars)]

    # -- inspection ---------------------------------------------------------
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def monomials(self) -> list[Monomial]:
        return list(self._terms)

    def coeff(self, m: Monomial) -> float:
        return self._terms.get(tuple(m), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        if not self._terms:
            return 0
        return max(sum(m) for m in self._terms)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # -- arithmetic -----------------------------------------------------------
    def _check(self, other: Polynomial) -> None:
        if other.n_vars != self.n_vars:
            raise DimensionError(f"variable count mismatch: {self.n_vars} vs {other.n_vars}")

    def _coerce(self, other) -> Polynomial:
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.n_vars, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(self.n_vars, out)

    __radd__ = __add__

    def __neg__(self) -> Polynomial:
        return Polynomial(self.n_vars, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other + (-self)

    def scale(self, s: float) -> Polynomial:
        s = float(s)
        return Polynomial(self.n_vars, {m: s * c for m, c in self._terms.items()})

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check(other)
        out: dict = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = _add_exp(m1, m2)
                out[m] = out.get(m, 0.0) + c1 * c2
        return Polynomial(self.n_vars, out)

    __rmul__ = __mul__

    def __truediv__(self, s):
        if isinstance(s, (int, float, np.floating, np.integer)):
            return self.scale(1.0 / float(s))
        return NotImplemented

    def __pow__(self, k: int) -> Polynomial:
        if int(k) != k or k < 0:
            raise ValueError("only non-negative integer powers")
        result = Polynomial.constant(self.n_vars, 1.0)
        base = self
        k = int(k)
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.n_vars == other.n_vars and self._terms == other._terms

    def __hash__(self):
        return hash((self.n_vars, tuple(self._terms.items())))

    def allclose(self, other: Polynomial, atol: float = 1e-9) -> bool:
        self._check(other)
        return (self - other).max_abs_coeff() <= atol

    # -- evaluation -----------------------------------------------------------
    def _exp_arrays(self):
        if self._arrays is None:
            if self._terms:
                E = np.array(list(self._terms), dtype=np.int64)
                c = np.array(list(self._terms.values()))
            else:
                E = np.zeros((0, self.n_vars), dtype=np.int64)
                c = np.zeros(0)
            self._arrays = (E, c)
        return self._arrays

    def evaluate(self, x: Sequence[float]) -> float:
        """Value at a single point, as a direct sum of term values."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_vars,):
            raise DimensionError(f"expected point of length {self.n_vars}, got shape {x.shape}")
        total = 0.0
        for m, c in self._terms.items():
            t = c
            for xi, e in zip(x, m):
                if e:
                    t *= xi ** e
            total += t
        return total

    def __call__(self, x) -> float:
        return self.evaluate(x)

    def evaluate_many(self, X: np.ndarray) -> np.ndarray:
        """Vectorised evaluation at the rows of ``X`` (shape ``(N, n_vars)``)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_vars:
            raise DimensionError(f"expected points with {self.n_vars} columns, got {X.shape[1]}")
        E, c = self._exp_arrays()
        if not len(c):
            return np.zeros(X.shape[0])
        vals = np.ones((X.shape[0], len(c)))
        for i in range(self.n_vars):
            col = E[:, i]
            if col.any():
                vals *= X[:, i : i + 1] ** col[None, :]
        return vals @ c

    # -- structure ------------------------------------------------------------
    def compose(self, subs: Sequence[Polynomial]) -> Polynomial:
        return compose(self, subs)

    def embed(self, n_vars: int, offset: int = 0) -> Polynomial:
        """Re-home into a larger variable space, shifting indices by ``offset``."""
        out = {}
        for m, c in self._terms.items():
            e = [0] * n_vars
            e[offset : offset + self.n_vars] = m
            out[tuple(e)] = c
        return Polynomial(n_vars, out)

    def restrict(self, n_vars: int) -> Polynomial:
        """Drop trailing variables, which must not occur in any term."""
        out = {}
        for m, c in self._terms.items():
            if any(m[n_vars:]):
                raise DimensionError("cannot restrict: trailing variable occurs")
            out[m[:n_vars]] = c
        return Polynomial(n_vars, out)

    def coefficient_vector(self, monos: Sequence[Monomial]) -> np.ndarray:
        return np.array([self._terms.get(tuple(m), 0.0) for m in monos])

    def to_string(self, names: Sequence[str] | None = None, fmt: str = "{:.17g}") -> str:
        names = names or [f"x{i}" for i in range(self.n_vars)]
        if not self._terms:
            return "0"
        parts = []
        for m, c in self._terms.items():
            factors = []
            for name, e in zip(names, m):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            mag = fmt.format(abs(c))
            body = "*".join([mag] + factors) if factors else mag
            parts.append(("- " if c < 0 else "+ ") + body)
        s = " ".join(parts)
        return s[2:] if s.startswith("+ ") else "-" + s[2:]

    def __str__(self) -> str:
        return self.to_string(fmt="{:.6g}")

    def __repr__(self) -> str:
        return f"Polynomial({self.n_vars}, {self._terms!r})"

    def to_json(self) -> dict:
        return {"n_vars": self.n_vars, "terms": [[list(m), c] for m, c in self._terms.items()]}

    @classmethod
    def from_json(cls, data: Mapping) -> Polynomial:
        return cls(data["n_vars"], {tuple(m): c for m, c in data["terms"]})


def compose(v: Polynomial, subs: Sequence[Polynomial]) -> Polynomial:
    """``v(subs[0](x), ..., subs[n-1](x))`` expanded exactly."""
    if len(subs) != v.n_vars:
        raise DimensionError(f"need {v.n_vars} substitutions, got {len(subs)}")
    if not subs:
        return v
    n_out = subs[0].n_vars
    for s in subs:
        if s.n_vars != n_out:
            raise DimensionError("substitutions do not share a variable space")
    cache = MonomialImages(subs)
    out: dict = {}
    for m, c in v.items():
        for mm, cc in cache.image(m).items():
            out[mm] = out.get(mm, 0.0) + c * cc
    return Polynomial(n_out, out)


class MonomialImages:
    """Memoised images ``m(subs)`` of monomials under a fixed substitution."""

    def __init__(self, subs: Sequence[Polynomial]):
        self.subs = list(subs)
        n_out = self.subs[0].n_vars
        self._memo = {(0,) * len(self.subs): Polynomial.constant(n_out, 1.0)}

    def image(self, m: Monomial) -> Polynomial:
        m = tuple(m)
        hit = self._memo.get(m)
        if hit is not None:
            return hit
        # peel off the last variable with a positive exponent
        i = max(k for k, e in enumerate(m) if e)
        prev = list(m)
        prev[i] -= 1
        p = self.image(tuple(prev)) * self.subs[i]
        self._memo[m] = p
        return p


class SemiAlgebraicSet:
    """``{x : p_i(x) <= 0 for all i}``."""

    def __init__(self, constraints: Iterable[Polynomial], box: Sequence[Sequence[float]] | None = None):
        self.constraints = list(constraints)
        if not self.constraints:
            raise ValueError("a semi-algebraic set needs at least one constraint")
        self.n_vars = self.constraints[0].n_vars
        for p in self.constraints:
            if p.n_vars != self.n_vars:
                raise DimensionError("constraints live in different variable spaces")
        self._box = None if box is None else np.asarray(box, dtype=float)

    def __len__(self) -> int:
        return len(self.constraints)

    def values(self, X: np.ndarray) -> np.ndarray:
        """Constraint values, shape ``(N, len(self))``."""
        X = np.atleast_2d(X)
        return np.column_stack([p.evaluate_many(X) for p in self.constraints])

    def contains(self, x) -> bool:
        return all(p.evaluate(x) <= 0.0 for p in self.constraints)

    def contains_many(self, X: np.ndarray) -> np.ndarray:
        return np.all(self.values(X) <= 0.0, axis=1)

    def max_violation(self, X: np.ndarray) -> np.ndarray:
        return self.values(X).max(axis=1)

    def intersect(self, other: SemiAlgebraicSet) -> SemiAlgebraicSet:
        box = self._box if self._box is not None else other._box
        return SemiAlgebraicSet(self.constraints + other.constraints, box=box)

    def as_ball(self):
        """``(center, radius)`` when the set is a single Euclidean ball, else ``None``."""
        if len(self.constraints) != 1:
            return None
        return _ball_of(self.constraints[0])

    def bounding_box(self) -> np.ndarray:
        """Axis box ``(n, 2)`` enclosing the set, from an explicit box or a ball constraint."""
        if self._box is not None:
            return self._box.copy()
        for p in self.constraints:
            ball = _ball_of(p)
            if ball is not None:
                c, r = ball
                return np.column_stack([c - r, c + r])
        raise ValueError("set has no ball constraint and no explicit bounding box")

    def to_strings(self, names=None) -> list[str]:
        return [p.to_string(names) for p in self.constraints]

    def __repr__(self) -> str:
        body = " and ".join(f"{p} <= 0" for p in self.constraints)
        return f"SemiAlgebraicSet({body})"


def _ball_of(p: Polynomial):
    """Recognise ``a*|x|^2 + l.x + k`` with a > 0 and return centre/radius."""
    if p.degree() != 2:
        return None
    n = p.n_vars
    a = None
    lin = np.zeros(n)
    const = 0.0
    for m, c in p.items():
        d = sum(m)
        if d == 0:
            const = c
        elif d == 1:
            lin[m.index(1)] = c
        elif max(m) == 2:
            if a is None:
                a = c
            elif abs(c - a) > 1e-12 * max(1.0, abs(a)):
                return None
        else:
            return None  # cross term
    if a is None or a <= 0:
        return None
    squares = sum(1 for m in p.monomials() if sum(m) == 2)
    if squares != n:
        return None
    center = -lin / (2 * a)
    r2 = center @ center - const / a
    if r2 <= 0:
        return None
    return center, math.sqrt(r2)


def ball(center: Sequence[float], radius: float) -> Polynomial:
    """``|x - center|^2 - radius^2`` as a polynomial."""
    center = [float(c) for c in center]
    n = len(center)
    xs = Polynomial.variables(n)
    p = Polynomial.constant(n, -float(radius) ** 2)
    for x, c in zip(xs, center):
        p = p + (x - c) ** 2
    return p


# -- textual syntax -----------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)|([A-Za-z_]\w*)|(\*\*|[-+*/^()]))")


class ParseError(ValueError):
    pass


def parse_polynomial(text: str, n_vars: int | None = None, names: Sequence[str] | None = None) -> Polynomial:
    """Parse e.g. ``3.5*x0^2*x1 - 1.0`` (parentheses and ``**`` also accepted).

    Variables default to ``x0 .. x{n-1}``; pass ``names`` to use others.
    """
    if names is None:
        if n_vars is None:
            found = [int(k) for k in re.findall(r"\bx(\d+)\b", text)]
            n_vars = max(found) + 1 if found else 1
        names = [f"x{i}" for i in range(n_vars)]
    index = {nm: i for i, nm in enumerate(names)}
    n = len(names)

    tokens = []
    pos = 0
    text_s = text.rstrip()
    while pos < len(text_s):
        mt = _TOKEN.match(text_s, pos)
        if not mt or mt.end() == pos:
            raise ParseError(f"unexpected character at {pos} in {text!r}")
        num, name, op = mt.groups()
        if num is not None:
            tokens.append(("num", float(num)))
        elif name is not None:
            if name not in index:
                raise ParseError(f"unknown variable {name!r} in {text!r}")
            tokens.append(("var", index[name]))
        else:
            tokens.append(("op", "^" if op == "**" else op))
        pos = mt.end()
    tokens.append(("end", None))
    i = 0

    def peek():
        return tokens[i]

    def take():
        nonlocal i
        t = tokens[i]
        i += 1
        return t

    def expr():
        p = term()
        while peek() in (("op", "+"), ("op", "-")):
            op = take()[1]
            q = term()
            p = p + q if op == "+" else p - q
        return p

    def term():
        p = unary()
        while peek() in (("op", "*"), ("op", "/")):
            op = take()[1]
            q = unary()
            if op == "*":
                p = p * q
            else:
                if q.degree() != 0:
                    raise ParseError("division only by constants")
                p = p / q.coeff((0,) * n)
        return p

    def unary():
        if peek() == ("op", "-"):
            take()
            return -unary()
        if peek() == ("op", "+"):
            take()
            return unary()
        return power()

    def power():
        base = atom()
        if peek() == ("op", "^"):
            take()
            kind, val = take()
            if kind != "num" or val != int(val):
                raise ParseError(f"exponent must be a non-negative integer in {text!r}")
            base = base ** int(val)
        return base

    def atom():
        kind, val = take()
        if kind == "num":
            return Polynomial.constant(n, val)
        if kind == "var":
            return Polynomial.variable(n, val)
        if (kind, val) == ("op", "("):
            p = expr()
            if take() != ("op", ")"):
                raise ParseError(f"unbalanced parentheses in {text!r}")
            return p
        raise ParseError(f"unexpected token {val!r} in {text!r}")

    result = expr()
    if peek()[0] != "end":
        raise ParseError(f"trailing input in {text!r}")
    return result
