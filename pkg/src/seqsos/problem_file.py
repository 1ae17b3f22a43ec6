"""Text problem files.

A file has sections ``[system]``, ``[variables]``, ``[constraints]``,
``[objective]`` and ``[options]``, each holding ``key = value`` lines
(``#`` starts a comment)::

    [system]
    nvars = 2
    dx1 = -x2
    dx2 = x1 + (x1^2 - 1)*x2

    [options]
    deg_v = 4

Without ``[variables]`` the file describes a region-of-attraction problem for
the vector field ``dx1..dxn``.  Otherwise it is a generic nonlinear SOS
program::

    [variables]
    v = free 2..4          # degree range; "free 4" means 0..4
    s = sos 0..2 : 1 + x1^2   # optional initial value after ':'

    [constraints]
    c1 = sos : @s*@v - x1*d1(@v)   # dK(@v) is the derivative in xK
    c2 = zero : @v - x1^2

    [objective]
    minimize = -1*@v       # coefficient polynomials act as weight vectors

Errors carry line and column numbers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ConstraintExpr, DecisionVar, Factor, Iterate, NlSosProblem, format_expr, parse_expr
from .poly import MonomialBasis, ParseError, Polynomial, parse_polynomial
from .roa import PolySystem, RoaSpec, build, init_guess

SECTIONS = ("system", "variables", "constraints", "objective", "options")

_INT_OPTIONS = {"max_iters", "deg_v", "deg_s1", "deg_s2", "verify_samples"}
_FLOAT_OPTIONS = {"eta", "tol", "dual_tol_rel", "r_floor", "solver_tol", "iota"}
_POLY_OPTIONS = {"shape", "rho"}
_ROA_ONLY = {"deg_v", "deg_s1", "deg_s2", "iota", "shape", "rho", "verify_samples"}
_NAME = re.compile(r"[A-Za-z_][A-Za-z_0-9]*$")


@dataclass
class VariableDecl:
    name: str
    kind: str
    maxdeg: int
    mindeg: int = 0
    init: Polynomial | None = None


@dataclass
class ConstraintDecl:
    name: str
    kind: str
    terms: list


@dataclass
class ProblemFile:
    nvars: int
    dynamics: list[Polynomial] = field(default_factory=list)
    variables: list[VariableDecl] = field(default_factory=list)
    constraints: list[ConstraintDecl] = field(default_factory=list)
    objective: list = field(default_factory=list)
    options: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return "nlsos" if self.variables else "roa"

    def to_spec(self):
        if self.kind != "roa":
            raise ValueError("not a region-of-attraction problem file")
        o = self.options
        return RoaSpec(
            PolySystem(list(self.dynamics)),
            deg_v=o.get("deg_v", 2),
            deg_s1=o.get("deg_s1"),
            deg_s2=o.get("deg_s2"),
            p=o.get("shape"),
            iota=o.get("iota", 1.0),
            rho=o.get("rho"),
        )

    def to_problem(self) -> tuple[NlSosProblem, Iterate]:
        """The program and its initial iterate (ROA files go through the ROA builder)."""
        if self.kind == "roa":
            spec = self.to_spec()
            prob = build(spec)
            return prob, init_guess(spec, prob)
        n = self.nvars
        vars_ = [DecisionVar(d.name, MonomialBasis(n, d.maxdeg, d.mindeg), d.kind == "sos")
                 for d in self.variables]
        cons = [ConstraintExpr(c.name, list(c.terms), c.kind) for c in self.constraints]
        dim = sum(v.dim for v in vars_)
        cost = np.zeros(dim)
        offs = np.cumsum([0] + [v.dim for v in vars_])
        where = {v.name: (k, v) for k, v in enumerate(vars_)}
        for coef, fs in self.objective:
            k, v = where[fs[0].var]
            cost[offs[k]:offs[k + 1]] += coef.coeffs(v.basis)
        prob = NlSosProblem(n, vars_, cost, cons)
        xi = prob.join({d.name: d.init for d in self.variables if d.init is not None})
        return prob, Iterate.primal(prob, xi)


def _fail(msg, line_no, col=0, text=""):
    raise ParseError(msg, text, col, line_no)


def _sub_parse(fn, text: str, offset: int, line_no: int, full: str):
    """Run ``fn`` on a substring, reporting errors in whole-line columns."""
    try:
        return fn(text)
    except ParseError as e:
        raise ParseError(e.msg, full, (e.pos or 0) + offset, line_no) from None


def parse(text: str) -> ProblemFile:
    entries: dict[str, list[tuple[str, str, int, int, str]]] = {s: [] for s in SECTIONS}
    seen_keys: dict[str, set] = {s: set() for s in SECTIONS}
    section = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        col0 = len(line) - len(line.lstrip())
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                _fail("unterminated section header", line_no, col0, raw)
            section = stripped[1:-1].strip()
            if section not in SECTIONS:
                _fail(f"unknown section [{section}]", line_no, col0, raw)
            continue
        if section is None:
            _fail("expected a [section] header before any key", line_no, col0, raw)
        if "=" not in line:
            _fail("expected 'key = value'", line_no, col0, raw)
        k_raw, v_raw = line.split("=", 1)
        key = k_raw.strip()
        vcol = len(k_raw) + 1 + (len(v_raw) - len(v_raw.lstrip()))
        if not _NAME.match(key):
            _fail(f"invalid key {key!r}", line_no, col0, raw)
        if key in seen_keys[section]:
            _fail(f"duplicate key {key!r} in [{section}]", line_no, col0, raw)
        seen_keys[section].add(key)
        entries[section].append((key, v_raw.strip(), line_no, vcol, raw))

    sys_entries = entries["system"]
    if not sys_entries and not any(entries.values()):
        raise ParseError("missing [system]")
    if "nvars" not in seen_keys["system"]:
        if not seen_keys["system"]:
            raise ParseError("missing [system]")
        raise ParseError("missing key 'nvars' in [system]")

    values = {e[0]: e for e in sys_entries}
    _, nv_text, ln, col, raw = values["nvars"]
    if not nv_text.isdigit() or int(nv_text) < 1:
        _fail("nvars must be a positive integer", ln, col, raw)
    n = int(nv_text)
    dyn_keys = {f"dx{i + 1}" for i in range(n)}
    for key, _, ln, col, raw in sys_entries:
        if key != "nvars" and key not in dyn_keys:
            _fail(f"unknown key {key!r} in [system]", ln, 0, raw)
    dynamics = []
    if dyn_keys & set(values):
        missing = sorted(dyn_keys - set(values), key=lambda s: int(s[2:]))
        if missing:
            raise ParseError(f"missing key {missing[0]!r} in [system]")
        for i in range(n):
            _, t, ln, col, raw = values[f"dx{i + 1}"]
            dynamics.append(_sub_parse(lambda s: parse_polynomial(s, n), t, col, ln, raw))

    variables = []
    for key, t, ln, col, raw in entries["variables"]:
        spec, _, init_text = t.partition(":")
        parts = spec.split()
        if len(parts) != 2 or parts[0] not in ("free", "sos"):
            _fail("expected 'free <deg>' or 'sos <deg>' (degree or lo..hi range)", ln, col, raw)
        m = re.fullmatch(r"(\d+)(?:\.\.(\d+))?", parts[1])
        if not m:
            _fail(f"bad degree {parts[1]!r}", ln, col, raw)
        lo, hi = (int(m.group(1)), int(m.group(2))) if m.group(2) else (0, int(m.group(1)))
        if lo > hi:
            _fail("degree range must be increasing", ln, col, raw)
        if parts[0] == "sos" and (lo % 2 or hi % 2):
            _fail("SOS variables need even degree bounds", ln, col, raw)
        init = None
        if init_text.strip():
            off = col + len(spec) + 1 + (len(init_text) - len(init_text.lstrip()))
            init = _sub_parse(lambda s: parse_polynomial(s, n), init_text.strip(), off, ln, raw)
            if init.degree > hi or (not init.is_zero() and init.lowdeg < lo):
                _fail(f"initial value of {key} is outside its degree range {lo}..{hi}", ln, off, raw)
        variables.append(VariableDecl(key, parts[0], hi, lo, init))
    declared = [v.name for v in variables]

    if entries["constraints"] and not variables:
        raise ParseError("[constraints] needs a [variables] section")
    constraints = []
    for key, t, ln, col, raw in entries["constraints"]:
        kind, expr_text, off = "sos", t, col
        m = re.match(r"(sos|zero)\s*:", t)
        if m:
            kind = m.group(1)
            rest = t[m.end():]
            off = col + m.end() + (len(rest) - len(rest.lstrip()))
            expr_text = rest.strip()
        e = _sub_parse(lambda s: parse_expr(s, n, None, declared), expr_text, off, ln, raw)
        constraints.append(ConstraintDecl(key, kind, e.as_terms()))

    objective = []
    for key, t, ln, col, raw in entries["objective"]:
        if key != "minimize":
            _fail(f"unknown key {key!r} in [objective]", ln, 0, raw)
        e = _sub_parse(lambda s: parse_expr(s, n, None, declared), t, col, ln, raw)
        for coef, fs in e.as_terms():
            if len(fs) != 1 or fs[0].deriv is not None:
                _fail("objective must be linear in the decision variables", ln, col, raw)
        objective = e.as_terms()
    if variables and not objective:
        raise ParseError("missing key 'minimize' in [objective]")

    options = {}
    for key, t, ln, col, raw in entries["options"]:
        if key in _ROA_ONLY and variables:
            _fail(f"option {key!r} only applies to region-of-attraction files", ln, 0, raw)
        try:
            if key in _INT_OPTIONS:
                options[key] = int(t)
            elif key in _FLOAT_OPTIONS:
                options[key] = float(t)
            elif key in _POLY_OPTIONS:
                options[key] = _sub_parse(lambda s: parse_polynomial(s, n), t, col, ln, raw)
            else:
                _fail(f"unknown key {key!r} in [options]", ln, 0, raw)
        except ValueError as e:
            if isinstance(e, ParseError):
                raise
            _fail(f"bad value for {key!r}: {t!r}", ln, col, raw)

    if not variables and not dynamics:
        raise ParseError("a file without [variables] needs dx1..dxn in [system]")
    return ProblemFile(n, dynamics, variables, constraints, objective, options)


def load(path) -> ProblemFile:
    return parse(Path(path).read_text(encoding="utf-8"))


def format_problem(pf: ProblemFile) -> str:
    out = ["[system]", f"nvars = {pf.nvars}"]
    out += [f"dx{i + 1} = {p}" for i, p in enumerate(pf.dynamics)]
    if pf.variables:
        out += ["", "[variables]"]
        for v in pf.variables:
            line = f"{v.name} = {v.kind} {v.mindeg}..{v.maxdeg}"
            if v.init is not None:
                line += f" : {v.init}"
            out.append(line)
    if pf.constraints:
        out += ["", "[constraints]"]
        out += [f"{c.name} = {c.kind} : {format_expr(c.terms)}" for c in pf.constraints]
    if pf.objective:
        out += ["", "[objective]", f"minimize = {format_expr(pf.objective)}"]
    if pf.options:
        out += ["", "[options]"]
        for k, v in pf.options.items():
            out.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
    return "\n".join(out) + "\n"


def data_path(name: str) -> Path:
    """Path of a problem file shipped with the package."""
    return Path(__file__).with_name("data") / name
