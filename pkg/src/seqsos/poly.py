"""Multivariate polynomials over a graded-lex monomial basis.

Polynomials are immutable maps from exponent tuples to float coefficients.
Coefficients below ``ZERO_TOL`` in magnitude are dropped after every
operation.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

ZERO_TOL = 1e-14


class Monomial(tuple):
    """Exponent multi-index, ordered graded-lexicographically.

    The constant monomial sorts first; within a degree, ``x1`` precedes
    ``x2`` and ``x1^2`` precedes ``x1*x2``.
    """

    def __new__(cls, alpha: Iterable[int]):
        obj = super().__new__(cls, (int(a) for a in alpha))
        if any(a < 0 for a in obj):
            raise ValueError(f"negative exponent in {tuple(obj)}")
        obj.degree = sum(obj)
        return obj

    def sort_key(self):
        return (self.degree, tuple(-a for a in self))

    def __lt__(self, other):
        return self.sort_key() < Monomial(other).sort_key()

    def __le__(self, other):
        return self.sort_key() <= Monomial(other).sort_key()

    def __gt__(self, other):
        return self.sort_key() > Monomial(other).sort_key()

    def __ge__(self, other):
        return self.sort_key() >= Monomial(other).sort_key()

    # tuple's own __eq__/__hash__ are kept so plain tuples work as keys

    def __mul__(self, other):
        return Monomial(a + b for a, b in zip(self, other))

    def __repr__(self):
        return f"Monomial({tuple(self)!r})"


def _prune(terms: Mapping) -> dict:
    return {Monomial(m): float(c) for m, c in terms.items() if abs(c) >= ZERO_TOL}


class Polynomial:
    """Real polynomial in ``nvars`` variables ``x1..xn``."""

    __slots__ = ("nvars", "_terms", "_hash")

    def __init__(self, nvars: int, terms: Mapping | None = None):
        if nvars < 1:
            raise ValueError("a polynomial needs at least one variable")
        self.nvars = int(nvars)
        terms = _prune(terms or {})
        for m in terms:
            if len(m) != self.nvars:
                raise ValueError(f"monomial {tuple(m)} does not have {nvars} exponents")
        self._terms = terms
        self._hash = None

    # construction helpers

    @classmethod
    def constant(cls, nvars: int, c: float) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars)

    @classmethod
    def var(cls, nvars: int, i: int) -> "Polynomial":
        """The coordinate ``x_{i+1}`` (``i`` is zero-based)."""
        alpha = [0] * nvars
        alpha[i] = 1
        return cls(nvars, {tuple(alpha): 1.0})

    @classmethod
    def monomial(cls, alpha: Sequence[int], c: float = 1.0) -> "Polynomial":
        return cls(len(alpha), {tuple(alpha): c})

    @classmethod
    def from_coeffs(cls, basis: "MonomialBasis", data) -> "Polynomial":
        data = np.asarray(data, dtype=float)
        if data.shape != (len(basis),):
            raise ValueError(f"expected {len(basis)} coefficients, got {data.shape}")
        return cls(basis.nvars, dict(zip(basis.monomials, data)))

    # basic queries

    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coeff(self, alpha) -> float:
        return self._terms.get(tuple(alpha), 0.0)

    @property
    def degree(self) -> int:
        return max((m.degree for m in self._terms), default=0)

    @property
    def lowdeg(self) -> int:
        """Smallest total degree among stored terms (0 for the zero polynomial)."""
        return min((m.degree for m in self._terms), default=0)

    def is_zero(self) -> bool:
        return not self._terms

    def __len__(self):
        return len(self._terms)

    # arithmetic

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise ValueError(f"variable count mismatch: {self.nvars} vs {other.nvars}")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.nvars, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other - self

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial(self.nvars, {m: c * other for m, c in self._terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                m = tuple(a + b for a, b in zip(ma, mb))
                out[m] = out.get(m, 0.0) + ca * cb
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (int, float, np.floating, np.integer)):
            return NotImplemented
        return self * (1.0 / other)

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only nonnegative integer powers are supported")
        out = Polynomial.constant(self.nvars, 1.0)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def shift(self, alpha: Sequence[int], c: float = 1.0) -> "Polynomial":
        """Multiply by the monomial ``c * x^alpha``."""
        return Polynomial(
            self.nvars,
            {tuple(a + b for a, b in zip(m, alpha)): v * c for m, v in self._terms.items()},
        )

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.nvars, frozenset(self._terms.items())))
        return self._hash

    def allclose(self, other: "Polynomial", tol: float = 1e-9) -> bool:
        return (self - other).max_abs_coeff() <= tol

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # calculus and evaluation

    def diff(self, i: int) -> "Polynomial":
        out = {}
        for m, c in self._terms.items():
            if m[i]:
                mm = list(m)
                mm[i] -= 1
                out[tuple(mm)] = c * m[i]
        return Polynomial(self.nvars, out)

    def gradient(self) -> list["Polynomial"]:
        """Row of partial derivatives (d/dx1, ..., d/dxn)."""
        return [self.diff(i) for i in range(self.nvars)]

    def __call__(self, point) -> float:
        return self.eval(point)

    def eval(self, point) -> float:
        """Evaluate at a point by nested Horner over the variables."""
        z = np.asarray(point, dtype=float).ravel()
        if z.shape != (self.nvars,):
            raise ValueError(f"point has {z.size} entries, expected {self.nvars}")
        return _horner(self._terms, z, 0)

    def eval_many(self, points) -> np.ndarray:
        """Vectorized evaluation at the rows of ``points``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.nvars:
            raise ValueError(f"points have {pts.shape[1]} columns, expected {self.nvars}")
        out = np.zeros(pts.shape[0])
        for m, c in self._terms.items():
            out += c * np.prod(pts ** np.asarray(m), axis=1)
        return out

    # coefficient coordinates

    def coeffs(self, basis: "MonomialBasis") -> np.ndarray:
        if basis.nvars != self.nvars:
            raise ValueError("basis has a different variable count")
        vec = np.zeros(len(basis))
        for m, c in self._terms.items():
            try:
                vec[basis.index[m]] = c
            except KeyError:
                raise ValueError(
                    f"monomial {format_monomial(m)} lies outside the basis degree range "
                    f"[{basis.mindeg}, {basis.maxdeg}]"
                ) from None
        return vec

    def norm(self) -> float:
        return math.sqrt(sum(c * c for c in self._terms.values()))

    # text

    def __str__(self):
        return format_polynomial(self)

    def __repr__(self):
        return f"Polynomial({self.nvars}, {format_polynomial(self)!r})"


def _horner(terms: Mapping, z: np.ndarray, i: int) -> float:
    if not terms:
        return 0.0
    if i == len(z):
        return float(sum(terms.values()))
    groups: dict[int, dict] = {}
    for m, c in terms.items():
        groups.setdefault(m[i], {})[m] = c
    acc = 0.0
    for k in range(max(groups), -1, -1):
        acc = acc * z[i] + (_horner(groups[k], z, i + 1) if k in groups else 0.0)
    return acc


@dataclass(frozen=True)
class MonomialBasis:
    """All monomials in ``nvars`` variables with degree in ``[mindeg, maxdeg]``."""

    nvars: int
    maxdeg: int
    mindeg: int = 0

    def __post_init__(self):
        if self.nvars < 1 or self.maxdeg < 0:
            raise ValueError("basis needs nvars >= 1 and maxdeg >= 0")
        if not 0 <= self.mindeg <= self.maxdeg:
            raise ValueError("basis needs 0 <= mindeg <= maxdeg")

    @property
    def monomials(self) -> tuple[Monomial, ...]:
        return _monomials(self.nvars, self.maxdeg, self.mindeg)

    @property
    def index(self) -> dict:
        return _index(self.nvars, self.maxdeg, self.mindeg)

    def __len__(self):
        return len(self.monomials)

    def __iter__(self):
        return iter(self.monomials)

    def __getitem__(self, k):
        return self.monomials[k]

    def polynomial(self, k: int) -> Polynomial:
        return Polynomial.monomial(self.monomials[k])

    def evaluate(self, point) -> np.ndarray:
        """Vector of monomial values at ``point``."""
        z = np.asarray(point, dtype=float)
        return np.array([np.prod(z ** np.asarray(m)) for m in self.monomials])


@lru_cache(maxsize=None)
def _monomials(nvars: int, maxdeg: int, mindeg: int = 0) -> tuple[Monomial, ...]:
    out = []
    for d in range(mindeg, maxdeg + 1):
        # combinations over variable indices give lex-descending order directly
        for combo in combinations_with_replacement(range(nvars), d):
            alpha = [0] * nvars
            for v in combo:
                alpha[v] += 1
            out.append(Monomial(alpha))
    return tuple(out)


@lru_cache(maxsize=None)
def _index(nvars: int, maxdeg: int, mindeg: int = 0) -> dict:
    return {m: k for k, m in enumerate(_monomials(nvars, maxdeg, mindeg))}


def basis(nvars: int, maxdeg: int) -> MonomialBasis:
    return MonomialBasis(nvars, maxdeg)


def num_monomials(nvars: int, maxdeg: int) -> int:
    return math.comb(nvars + maxdeg, maxdeg)


@dataclass(frozen=True)
class CoeffVector:
    """Coordinates of a polynomial (or of a linear functional) in a basis.

    Used both for elements of R_d[x] and, via the dot-product pairing, for
    elements of its dual space.
    """

    basis: MonomialBasis
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.shape != (len(self.basis),):
            raise ValueError(f"expected {len(self.basis)} entries, got {data.shape}")
        object.__setattr__(self, "data", data)

    @classmethod
    def of(cls, p: Polynomial, basis: MonomialBasis) -> "CoeffVector":
        return cls(basis, p.coeffs(basis))

    @classmethod
    def zeros(cls, basis: MonomialBasis) -> "CoeffVector":
        return cls(basis, np.zeros(len(basis)))

    def to_polynomial(self) -> Polynomial:
        return Polynomial.from_coeffs(self.basis, self.data)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def __add__(self, other: "CoeffVector") -> "CoeffVector":
        return CoeffVector(self.basis, self.data + other.data)

    def __sub__(self, other: "CoeffVector") -> "CoeffVector":
        return CoeffVector(self.basis, self.data - other.data)

    def __mul__(self, a: float) -> "CoeffVector":
        return CoeffVector(self.basis, self.data * a)

    __rmul__ = __mul__


DualFunctional = CoeffVector


def pair(ell: CoeffVector, p: Polynomial) -> float:
    """Evaluate the functional ``ell`` on ``p`` (dot product of coefficients)."""
    return float(ell.data @ p.coeffs(ell.basis))


def norm(obj) -> float:
    """Euclidean coefficient norm; self-dual, so it also serves as ||.||_*."""
    return obj.norm()


# ---------------------------------------------------------------------------
# text syntax

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<dref>d\d+\(\s*@[A-Za-z_][A-Za-z_0-9]*\s*\))"
    r"|(?P<var>x(?P<idx>\d+))"
    r"|(?P<ref>@[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*^()]))"
)


class ParseError(ValueError):
    def __init__(self, msg: str, text: str = "", pos: int | None = None, line: int | None = None):
        self.text, self.pos, self.line, self.msg = text, pos, line, msg
        if pos is None:
            where = "" if line is None else f"line {line}: "
        else:
            where = f"line {line}, column {pos + 1}: " if line is not None else f"column {pos + 1}: "
        super().__init__(f"{where}{msg}")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            bad = len(text) - len(text[pos:].lstrip()) if pos < len(text) else pos
            raise ParseError(f"unexpected character {text[bad]!r}", text, bad)
        kind = m.lastgroup if m.lastgroup != "idx" else "var"
        start = m.start(kind)
        toks.append((kind, m.group(kind), start))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


class _ExprParser:
    """Recursive-descent parser producing values in a caller-supplied ring.

    ``atom_var(i)`` builds ``x_{i+1}``, ``atom_num(c)`` a constant and
    ``atom_ref(name, tok, deriv)`` a decision-variable reference (``@name``,
    or ``dK(@name)`` for its derivative in ``x_K``, passed as ``deriv = K-1``).
    """

    def __init__(self, text, atom_num, atom_var, atom_ref=None, line=None):
        self.text, self.line = text, line
        self.toks = _tokenize(text)
        self.k = 0
        self.atom_num, self.atom_var, self.atom_ref = atom_num, atom_var, atom_ref

    def error(self, msg, tok=None):
        tok = tok or self.toks[min(self.k, len(self.toks) - 1)]
        raise ParseError(msg, self.text, tok[2], self.line)

    def peek(self):
        return self.toks[self.k]

    def take(self):
        tok = self.toks[self.k]
        self.k += 1
        return tok

    def parse(self):
        if self.peek()[0] == "end":
            self.error("empty expression")
        val = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected {self.peek()[1]!r}")
        return val

    def expr(self):
        sign = 1.0
        if self.peek()[1] in "+-" and self.peek()[0] == "op":
            sign = -1.0 if self.take()[1] == "-" else 1.0
        val = self.term()
        if sign < 0:
            val = val * -1.0
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            rhs = self.term()
            val = val + rhs if op == "+" else val - rhs
        return val

    def term(self):
        val = self.power()
        while True:
            tok = self.peek()
            if tok[0] == "op" and tok[1] == "*":
                self.take()
                val = val * self.power()
            elif tok[0] in ("num", "var", "ref", "dref") or (tok[0] == "op" and tok[1] == "("):
                # implicit multiplication: "3.5x1" or "2(x1+1)"
                val = val * self.power()
            else:
                return val

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            tok = self.take()
            if tok[0] != "num" or not tok[1].isdigit():
                self.error("exponent must be a nonnegative integer", tok)
            k = int(tok[1])
            out = None
            for _ in range(k):
                out = base if out is None else out * base
            return out if out is not None else self.atom_num(1.0)
        return base

    def atom(self):
        tok = self.take()
        kind, val = tok[0], tok[1]
        if kind == "num":
            return self.atom_num(float(val))
        if kind == "var":
            i = int(val[1:])
            if i < 1:
                self.error("variables are numbered from x1", tok)
            return self.atom_var(i - 1, tok)
        if kind == "ref":
            if self.atom_ref is None:
                self.error(f"decision variable {val} not allowed here", tok)
            return self.atom_ref(val[1:], tok, None)
        if kind == "dref":
            if self.atom_ref is None:
                self.error(f"decision variable derivative {val} not allowed here", tok)
            k = int(val[1:val.index("(")])
            if k < 1:
                self.error("derivatives are numbered from d1", tok)
            name = val[val.index("@") + 1:-1].strip()
            return self.atom_ref(name, tok, k - 1)
        if kind == "op" and val == "(":
            inner = self.expr()
            if self.take()[1] != ")":
                self.error("expected ')'")
            return inner
        self.error(f"unexpected {val!r}" if val else "unexpected end of expression", tok)


def parse_polynomial(text: str, nvars: int | None = None, line: int | None = None) -> Polynomial:
    """Parse ``3.5*x1^2*x2 - 1e-6*x2^4`` style text.

    Without ``nvars`` the variable count is the largest index used (at least 1).
    """
    if nvars is None:
        idx = [int(m) for m in re.findall(r"x(\d+)", text)]
        nvars = max(idx + [1])

    def var(i, tok):
        if i >= nvars:
            raise ParseError(f"x{i + 1} exceeds the {nvars} declared variables", text, tok[2], line)
        return Polynomial.var(nvars, i)

    return _ExprParser(
        text, lambda c: Polynomial.constant(nvars, c), var, line=line
    ).parse()


def format_monomial(alpha) -> str:
    parts = []
    for i, a in enumerate(alpha):
        if a == 1:
            parts.append(f"x{i + 1}")
        elif a > 1:
            parts.append(f"x{i + 1}^{a}")
    return "*".join(parts) if parts else "1"


def format_polynomial(p: Polynomial) -> str:
    """Canonical text form; coefficients use repr so parsing round-trips exactly."""
    if p.is_zero():
        return "0"
    out = []
    for m in sorted(p._terms, key=Monomial.sort_key):
        c = p._terms[m]
        sign = "-" if c < 0 else "+"
        a = abs(c)
        mono = format_monomial(m)
        if mono == "1":
            body = repr(a)
        elif a == 1.0:
            body = mono
        else:
            body = f"{a!r}*{mono}"
        out.append((sign, body))
    first_sign, first = out[0]
    text = ("-" if first_sign == "-" else "") + first
    for sign, body in out[1:]:
        text += f" {sign} {body}"
    return text
