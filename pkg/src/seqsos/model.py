"""Nonlinear SOS programs: min <f, xi>  s.t.  g(xi) in D,  xi in C.

Constraint maps are sums of terms ``c_j(x) * prod_i F_i(xi)``, where each
factor ``F_i`` is a decision polynomial or one of its partial derivatives in
``x``.  Because every factor is linear in ``xi``, derivatives and adjoints
follow from the product rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import gram
from .poly import (
    MonomialBasis,
    ParseError,
    Polynomial,
    _ExprParser,
)


@dataclass(frozen=True)
class Factor:
    """Decision variable ``var``, optionally differentiated in ``x_{deriv+1}``."""

    var: str
    deriv: int | None = None

    def __lt__(self, other: "Factor") -> bool:
        # undifferentiated factors sort before derivatives of the same variable
        return (self.var, -1 if self.deriv is None else self.deriv) < (
            other.var, -1 if other.deriv is None else other.deriv)

    def __str__(self):
        return f"@{self.var}" if self.deriv is None else f"d{self.deriv + 1}(@{self.var})"


@dataclass(frozen=True)
class DecisionVar:
    name: str
    basis: MonomialBasis
    sos: bool = False

    def __post_init__(self):
        if self.sos and (self.basis.maxdeg % 2 or self.basis.mindeg % 2):
            raise ValueError(
                f"SOS variable {self.name} needs an even degree range, got "
                f"[{self.basis.mindeg}, {self.basis.maxdeg}]"
            )

    @property
    def gram_degrees(self) -> tuple[int, int]:
        return self.basis.maxdeg // 2, self.basis.mindeg // 2

    @property
    def dim(self) -> int:
        return len(self.basis)


@dataclass
class ConstraintExpr:
    """``sum_j coef_j * prod(factors_j)`` constrained to the SOS cone (or to zero)."""

    name: str
    terms: list[tuple[Polynomial, tuple[Factor, ...]]]
    kind: str = "sos"
    degree: int | None = None

    def __post_init__(self):
        if self.kind not in ("sos", "zero"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        self.terms = [(c, tuple(sorted(fs))) for c, fs in self.terms]

    def order(self) -> int:
        """Polynomial degree of the expression in the decision variables."""
        return max((len(fs) for _, fs in self.terms), default=0)


@dataclass
class NlSosProblem:
    nvars: int
    vars: list[DecisionVar]
    cost: np.ndarray
    constraints: list[ConstraintExpr]
    bases: list[MonomialBasis] = field(init=False)
    halfdegs: list[int | None] = field(init=False)
    lowhalfs: list[int | None] = field(init=False)

    def __post_init__(self):
        names = [v.name for v in self.vars]
        if len(set(names)) != len(names):
            raise ValueError("duplicate decision variable names")
        for v in self.vars:
            if v.basis.nvars != self.nvars:
                raise ValueError(f"variable {v.name} lives in {v.basis.nvars} variables")
        self.cost = np.asarray(self.cost, dtype=float)
        if self.cost.shape != (self.dim,):
            raise ValueError(f"cost has {self.cost.shape} entries, expected {self.dim}")
        self._var = {v.name: k for k, v in enumerate(self.vars)}
        offs = np.cumsum([0] + [v.dim for v in self.vars])
        self._slices = {v.name: slice(int(offs[k]), int(offs[k + 1])) for k, v in enumerate(self.vars)}
        self.bases, self.halfdegs, self.lowhalfs = [], [], []
        for con in self.constraints:
            bound, low = 0, None
            for coef, fs in con.terms:
                for f in fs:
                    if f.var not in self._var:
                        raise ValueError(f"constraint {con.name} references undeclared @{f.var}")
                    if f.deriv is not None and not 0 <= f.deriv < self.nvars:
                        raise ValueError(f"constraint {con.name}: bad derivative index")
                if coef.nvars != self.nvars:
                    raise ValueError(f"constraint {con.name}: coefficient has wrong variable count")
                d = coef.degree + sum(self.var(f.var).basis.maxdeg - (f.deriv is not None) for f in fs)
                bound = max(bound, d)
                lo = coef.lowdeg + sum(max(self.var(f.var).basis.mindeg - (f.deriv is not None), 0) for f in fs)
                low = lo if low is None else min(low, lo)
            if con.degree is not None:
                if con.degree < bound:
                    raise ValueError(
                        f"constraint {con.name}: declared degree {con.degree} < expression degree {bound}"
                    )
                bound = con.degree
            low = min(low or 0, bound)
            if con.kind == "sos":
                # lowest structural degree bounds the Gram basis from below
                h = gram.halfdeg_for(bound)
                self.halfdegs.append(h)
                self.lowhalfs.append(low // 2)
                self.bases.append(MonomialBasis(self.nvars, 2 * h, 2 * (low // 2)))
            else:
                self.halfdegs.append(None)
                self.lowhalfs.append(None)
                self.bases.append(MonomialBasis(self.nvars, bound, low))

    # layout

    @property
    def dim(self) -> int:
        return sum(v.dim for v in self.vars)

    def var(self, name: str) -> DecisionVar:
        return self.vars[self._var[name]]

    def slice(self, name: str) -> slice:
        return self._slices[name]

    def split(self, xi: np.ndarray) -> dict[str, Polynomial]:
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (self.dim,):
            raise ValueError(f"primal vector has {xi.shape} entries, expected {self.dim}")
        return {v.name: Polynomial.from_coeffs(v.basis, xi[self.slice(v.name)]) for v in self.vars}

    def join(self, values: dict[str, Polynomial | float]) -> np.ndarray:
        xi = np.zeros(self.dim)
        for name, p in values.items():
            v = self.var(name)
            if not isinstance(p, Polynomial):
                p = Polynomial.constant(self.nvars, float(p))
            xi[self.slice(name)] = p.coeffs(v.basis)
        return xi

    def sos_vars(self) -> list[DecisionVar]:
        return [v for v in self.vars if v.sos]

    def objective(self, xi: np.ndarray) -> float:
        return float(self.cost @ xi)


@dataclass
class Iterate:
    """Primal coefficients ``xi``, constraint duals ``ell`` and cone duals ``s``.

    ``s`` lives in the primal coordinate space and is zero on free variables.
    """

    xi: np.ndarray
    ell: list[np.ndarray]
    s: np.ndarray

    @classmethod
    def primal(cls, prob: NlSosProblem, xi: np.ndarray) -> "Iterate":
        return cls(np.asarray(xi, dtype=float).copy(),
                   [np.zeros(len(b)) for b in prob.bases], np.zeros(prob.dim))

    def ell_vector(self) -> np.ndarray:
        return np.concatenate(self.ell) if self.ell else np.zeros(0)

    def copy(self) -> "Iterate":
        return Iterate(self.xi.copy(), [l.copy() for l in self.ell], self.s.copy())


def _factor_value(f: Factor, vals: dict[str, Polynomial]) -> Polynomial:
    p = vals[f.var]
    return p if f.deriv is None else p.diff(f.deriv)


def eval_g(prob: NlSosProblem, xi: np.ndarray) -> list[Polynomial]:
    vals = prob.split(xi)
    out = []
    for con, basis in zip(prob.constraints, prob.bases):
        acc = Polynomial.zero(prob.nvars)
        for coef, fs in con.terms:
            t = coef
            for f in fs:
                t = t * _factor_value(f, vals)
            acc = acc + t
        if acc.degree > basis.maxdeg:
            raise ValueError(f"constraint {con.name} has degree {acc.degree} > {basis.maxdeg}")
        out.append(acc)
    return out


def apply_deriv(prob: NlSosProblem, xi0: np.ndarray, delta: np.ndarray) -> list[Polynomial]:
    """Directional derivative of every constraint map at ``xi0``."""
    vals = prob.split(xi0)
    dvals = prob.split(delta)
    out = []
    for con in prob.constraints:
        acc = Polynomial.zero(prob.nvars)
        for coef, fs in con.terms:
            for k in range(len(fs)):
                t = coef
                for i, f in enumerate(fs):
                    t = t * _factor_value(f, dvals if i == k else vals)
                acc = acc + t
        out.append(acc)
    return out


def jacobian(prob: NlSosProblem, xi0: np.ndarray, active: Iterable[str] | None = None) -> list[np.ndarray]:
    """Matrices of the derivative at ``xi0``, one per constraint.

    Rows follow the constraint basis; columns the primal layout (restricted to
    ``active`` variables, in declaration order, when given).
    """
    vals = prob.split(xi0)
    active = [v.name for v in prob.vars] if active is None else list(active)
    cols = {}
    off = 0
    for v in prob.vars:
        if v.name in active:
            cols[v.name] = off
            off += v.dim
    mats = []
    for con, basis in zip(prob.constraints, prob.bases):
        J = np.zeros((len(basis), off))
        idx = basis.index
        for coef, fs in con.terms:
            for k, fk in enumerate(fs):
                if fk.var not in cols:
                    continue
                rest = coef
                for i, f in enumerate(fs):
                    if i != k:
                        rest = rest * _factor_value(f, vals)
                if rest.is_zero():
                    continue
                var = prob.var(fk.var)
                c0 = cols[fk.var]
                for col, m in enumerate(var.basis):
                    unit = Polynomial.monomial(m)
                    if fk.deriv is not None:
                        unit = unit.diff(fk.deriv)
                        if unit.is_zero():
                            continue
                    for mono, c in (rest * unit).items():
                        J[idx[mono], c0 + col] += c
        mats.append(J)
    return mats


def apply_adjoint(prob: NlSosProblem, xi0: np.ndarray, ell: Sequence[np.ndarray]) -> np.ndarray:
    """Primal-space functional w with <w, d> = sum_c <ell_c, Dg_c(xi0) d>."""
    mats = jacobian(prob, xi0)
    w = np.zeros(prob.dim)
    for J, l in zip(mats, ell):
        w += J.T @ np.asarray(l, dtype=float)
    return w


def pair_constraints(prob: NlSosProblem, ell: Sequence[np.ndarray], polys: Sequence[Polynomial]) -> float:
    return float(sum(np.asarray(l) @ p.coeffs(b) for l, p, b in zip(ell, polys, prob.bases)))


def lagrangian(prob: NlSosProblem, it: Iterate) -> float:
    return prob.objective(it.xi) - pair_constraints(prob, it.ell, eval_g(prob, it.xi))


@dataclass
class KktResidual:
    stationarity: float
    comp_primal: float
    comp_dual: float
    feas_primal: float

    def max(self) -> float:
        return max(self.stationarity, self.comp_primal, self.comp_dual, self.feas_primal)


def kkt_residual(prob: NlSosProblem, it: Iterate, check_membership: bool = True, backend=None) -> KktResidual:
    """Residuals of stationarity, both complementarities and cone membership.

    ``feas_primal`` runs a Gram check on every SOS-constrained polynomial
    (constraints and SOS variables); zero-kind constraints contribute their
    coefficient norm.  Pass ``check_membership=False`` to skip the SDP solves.
    """
    g = eval_g(prob, it.xi)
    stat = prob.cost - apply_adjoint(prob, it.xi, it.ell) - it.s
    comp_p = abs(float(it.s @ it.xi))
    comp_d = abs(pair_constraints(prob, it.ell, g))
    feas = 0.0
    if check_membership:
        vals = prob.split(it.xi)
        for con, p in zip(prob.constraints, g):
            if con.kind == "sos":
                feas = max(feas, gram.membership_violation(p, backend))
            else:
                feas = max(feas, p.norm())
        for v in prob.sos_vars():
            feas = max(feas, gram.membership_violation(vals[v.name], backend))
    return KktResidual(float(np.linalg.norm(stat)), comp_p, comp_d, feas)


# ---------------------------------------------------------------------------
# decision-variable expressions from text

class Expr:
    """Multilinear expression: map from sorted factor tuples to coefficient polynomials."""

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: dict | None = None):
        self.nvars = nvars
        self.terms = {k: v for k, v in (terms or {}).items() if not v.is_zero()}

    @classmethod
    def poly(cls, p: Polynomial) -> "Expr":
        return cls(p.nvars, {(): p})

    def __add__(self, other):
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out[k] + v if k in out else v
        return Expr(self.nvars, out)

    def __sub__(self, other):
        return self + other * -1.0

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Expr(self.nvars, {k: v * other for k, v in self.terms.items()})
        out: dict = {}
        for ka, va in self.terms.items():
            for kb, vb in other.terms.items():
                k = tuple(sorted(ka + kb))
                p = va * vb
                out[k] = out[k] + p if k in out else p
        return Expr(self.nvars, out)

    def as_terms(self) -> list[tuple[Polynomial, tuple[Factor, ...]]]:
        return [(v, k) for k, v in self.terms.items()]


def parse_expr(text: str, nvars: int, line: int | None = None, declared: Iterable[str] | None = None) -> Expr:
    """Parse constraint text with ``@name`` references and ``dK(@name)`` derivatives."""
    declared = set(declared) if declared is not None else None

    def ref(name, tok, deriv):
        if deriv is not None and deriv >= nvars:
            raise ParseError(f"derivative index d{deriv + 1} out of range", text, tok[2], line)
        if declared is not None and name not in declared:
            raise ParseError(f"undeclared decision variable @{name}", text, tok[2], line)
        return Expr(nvars, {(Factor(name, deriv),): Polynomial.constant(nvars, 1.0)})

    def var(i, tok):
        if i >= nvars:
            raise ParseError(f"x{i + 1} exceeds the {nvars} declared variables", text, tok[2], line)
        return Expr.poly(Polynomial.var(nvars, i))

    return _ExprParser(text, lambda c: Expr.poly(Polynomial.constant(nvars, c)), var, ref, line=line).parse()


def format_expr(terms: Sequence[tuple[Polynomial, tuple[Factor, ...]]]) -> str:
    parts = []
    for coef, fs in terms:
        body = "*".join(str(f) for f in fs)
        c = str(coef)
        if not fs:
            parts.append(f"({c})")
        elif coef == Polynomial.constant(coef.nvars, 1.0):
            parts.append(body)
        else:
            parts.append(f"({c})*{body}")
    return " + ".join(parts) if parts else "0"
