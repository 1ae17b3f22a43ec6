"""Sequential convex SOS programming with a merit-function line search.

Each outer iteration linearizes ``g`` at the current primal point, solves
the resulting convex SOS program (and reads its dual from the equality
multipliers), picks a step by exact univariate minimization of
``L(r xi_+ + (1-r) xi_k, l_+) - eta r`` on ``(0, 1]`` and moves the primal
and dual iterates by that step.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from . import gram, sdp
from .model import Iterate, KktResidual, NlSosProblem, eval_g, jacobian, kkt_residual, pair_constraints
from .poly import Polynomial

log = logging.getLogger(__name__)


@dataclass
class SeqConfig:
    eta: float = 1e-3
    eps_primal: float = 1e-6
    eps_dual_rel: float = 1e-6
    max_iters: int = 100
    r_floor: float = 1e-8
    # subproblems are solved one order tighter than the solver default so
    # that converged iterates re-certify at eig_tol
    solver_tol: float = 1e-9

    def backend(self) -> sdp.InteriorPointSolver:
        return sdp.InteriorPointSolver(gap_tol=self.solver_tol, feas_tol=self.solver_tol)

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.eps_primal <= 0 or self.eps_dual_rel <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.r_floor <= 1:
            raise ValueError("r_floor must lie in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


class RunStatus(str, enum.Enum):
    CONVERGED = "converged"
    MAXED = "maxed"
    FAILED = "failed"

    @property
    def exit_code(self) -> int:
        return {"converged": 0, "maxed": 2, "failed": 3}[self.value]


# ---------------------------------------------------------------------------
# convex subproblem

@dataclass
class ConvexProgram:
    """A conic program together with the bookkeeping to read results back.

    ``con_rows[c]`` is empty for constraints left out of the program.
    """

    prog: sdp.ConicProgram
    active: list[str]
    cols: dict[str, slice]
    con_rows: list[list[int]]
    var_rows: dict[str, list[int]]
    gamma: list[np.ndarray]
    jac: list[np.ndarray]


def build_convex(prob: NlSosProblem, xi_k: np.ndarray, active: Iterable[str] | None = None,
                 constraints: Sequence[int] | None = None, with_cost: bool = True,
                 exact: bool = False) -> ConvexProgram:
    """Convex SOS program from ``g`` linearized at ``xi_k`` in the ``active`` variables.

    Inactive variables stay fixed at their ``xi_k`` values.  With
    ``exact=True`` the map must be affine in the active variables (no product of
    two active factors), so the linearization is exact.
    """
    names = [v.name for v in prob.vars]
    active = names if active is None else [n for n in names if n in set(active)]
    if exact:
        aset = set(active)
        for con in prob.constraints:
            for _, fs in con.terms:
                if sum(f.var in aset for f in fs) > 1:
                    raise ValueError(f"constraint {con.name} is not affine in {sorted(aset)}")
    constraints = range(len(prob.constraints)) if constraints is None else constraints
    xi_k = np.asarray(xi_k, dtype=float)
    jac_all = jacobian(prob, xi_k, active)
    g_k = eval_g(prob, xi_k)
    xa = np.concatenate([xi_k[prob.slice(n)] for n in active]) if active else np.zeros(0)

    B = sdp.ProgramBuilder()
    handles = B.add_free(len(xa))
    cols = {}
    off = 0
    for n in active:
        d = prob.var(n).dim
        cols[n] = slice(off, off + d)
        off += d
    if with_cost:
        cost = np.concatenate([prob.cost[prob.slice(n)] for n in active]) if active else np.zeros(0)
        for h, cval in zip(handles, cost):
            if cval:
                B.set_cost(h, float(cval))

    ncon = len(prob.constraints)
    con_rows = [[] for _ in range(ncon)]
    gammas = [np.zeros(len(b)) for b in prob.bases]
    jacs = [None] * ncon
    for ci in constraints:
        con, basis = prob.constraints[ci], prob.bases[ci]
        J = jac_all[ci]
        gamma = J @ xa - g_k[ci].coeffs(basis)
        gammas[ci], jacs[ci] = gamma, J
        if con.kind == "sos":
            blocks = gram.sos_constraint_blocks(gram.AffineExpr(basis, J, -gamma), prob.halfdegs[ci],
                                                prob.lowhalfs[ci])
            _, rows = gram.emit(B, blocks, handles)
        else:
            rows = []
            for k in range(len(basis)):
                coeffs = {handles[c]: J[k, c] for c in np.flatnonzero(J[k])}
                rows.append(B.add_row(coeffs, gamma[k]))
        con_rows[ci] = rows

    var_rows = {}
    for n in active:
        v = prob.var(n)
        if not v.sos:
            continue
        h, lo = v.gram_degrees
        sl = cols[n]
        J = np.zeros((v.dim, len(xa)))
        J[np.arange(v.dim), np.arange(sl.start, sl.stop)] = 1.0
        blocks = gram.sos_constraint_blocks(gram.AffineExpr(v.basis, J, np.zeros(v.dim)), h, lo)
        _, rows = gram.emit(B, blocks, handles)
        var_rows[n] = rows
    return ConvexProgram(B.build(), active, cols, con_rows, var_rows, gammas, jacs)


def linearize(prob: NlSosProblem, xi_k: np.ndarray) -> ConvexProgram:
    return build_convex(prob, xi_k)


def gamma_k(prob: NlSosProblem, xi_k: np.ndarray) -> list:
    """Linearization offsets  Dg(xi_k) xi_k - g(xi_k)  as polynomials."""
    cp = build_convex(prob, xi_k)
    return [Polynomial.from_coeffs(b, gm) for b, gm in zip(prob.bases, cp.gamma)]


@dataclass
class SubproblemResult:
    xi_plus: np.ndarray
    ell_plus: list[np.ndarray]
    s_plus: np.ndarray
    gap: float
    status: sdp.Status
    objective: float
    dual_objective: float
    solver_iterations: int
    N: int
    M: int
    solution: sdp.ConicSolution = field(repr=False)

    @property
    def cost_order(self) -> int:
        return sdp.cost_order(self.N, self.M)


def read_solution(prob: NlSosProblem, cp: ConvexProgram, sol: sdp.ConicSolution, xi_k: np.ndarray):
    """Primal point with inactive variables at ``xi_k``, the constraint duals and cone duals."""
    xi = np.asarray(xi_k, dtype=float).copy()
    x = sol.primal[:cp.prog.n_free]
    for n in cp.active:
        xi[prob.slice(n)] = x[cp.cols[n]]
    # constraints left out of the program get zero multipliers
    ell = [gram.extract_dual(sol.eq_duals[rows], b).data if rows else np.zeros(len(b))
           for rows, b in zip(cp.con_rows, prob.bases)]
    s = np.zeros(prob.dim)
    for n, rows in cp.var_rows.items():
        s[prob.slice(n)] = sol.eq_duals[rows]
    return xi, ell, s


def solve_subproblem(prob: NlSosProblem, xi_k: np.ndarray, backend: sdp.Backend | None = None) -> SubproblemResult:
    cp = linearize(prob, xi_k)
    sol = sdp.solve(cp.prog, backend)
    if sol.status is not sdp.Status.OPTIMAL:
        return SubproblemResult(np.asarray(xi_k).copy(), [np.zeros(len(b)) for b in prob.bases],
                                np.zeros(prob.dim), math.nan, sol.status, math.nan, math.nan,
                                sol.iterations, cp.prog.N, cp.prog.M, sol)
    xi, ell, s = read_solution(prob, cp, sol, xi_k)
    obj = prob.objective(xi)
    dual_obj = float(sum(l @ gm for l, gm in zip(ell, cp.gamma)))
    return SubproblemResult(xi, ell, s, abs(obj - dual_obj), sol.status, obj, dual_obj,
                            sol.iterations, cp.prog.N, cp.prog.M, sol)


# ---------------------------------------------------------------------------
# line search

@dataclass
class LineSearch:
    r_hat: float
    psi: np.ndarray          # ascending power coefficients of psi(r)
    dpsi0: float
    kappa_hat: float
    merit: float

    def psi_at(self, r):
        return npoly.polyval(r, self.psi)


def merit_polynomial(prob: NlSosProblem, xi_k, xi_plus, ell_plus) -> np.ndarray:
    """Coefficients of psi(r) = L(r xi_+ + (1-r) xi_k, l_+), recovered by interpolation."""
    order = max((c.order() for c in prob.constraints), default=1)
    deg = max(order, 1)
    npts = deg + 2
    # Chebyshev nodes on [0, 1] keep the Vandermonde system well conditioned
    rs = 0.5 - 0.5 * np.cos(np.pi * (np.arange(npts) + 0.5) / npts)
    vals = []
    for r in rs:
        xi = r * xi_plus + (1 - r) * xi_k
        vals.append(prob.objective(xi) - pair_constraints(prob, ell_plus, eval_g(prob, xi)))
    return npoly.polyfit(rs, np.array(vals), deg)


def curvature_bound(psi: np.ndarray, samples: int = 65) -> float:
    """Largest sampled second difference of psi on [0, 1]."""
    r = np.linspace(0.0, 1.0, samples)
    h = r[1] - r[0]
    v = npoly.polyval(r, psi)
    d2 = (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
    return float(np.max(np.abs(d2))) if d2.size else 0.0


def minimize_merit(psi: np.ndarray, eta: float, r_floor: float = 1e-8) -> float:
    """Global minimizer of psi(r) - eta r over (0, 1], floored at ``r_floor``."""
    merit = npoly.polysub(psi, [0.0, eta])
    dmerit = npoly.polyder(merit)
    cands = [r_floor, 1.0]
    if len(dmerit) > 1 or (len(dmerit) == 1 and dmerit[0] == 0):
        nz = np.trim_zeros(dmerit, "b")
        if len(nz) > 1:
            for root in npoly.polyroots(nz):
                if abs(root.imag) <= 1e-10 * max(1.0, abs(root.real)) and 0.0 < root.real < 1.0:
                    cands.append(float(root.real))
    vals = npoly.polyval(np.array(cands), merit)
    r = cands[int(np.argmin(vals))]
    return max(r, r_floor)


def line_search(prob: NlSosProblem, xi_k, xi_plus, ell_plus, eta: float, r_floor: float = 1e-8) -> LineSearch:
    psi = merit_polynomial(prob, xi_k, xi_plus, ell_plus)
    r = minimize_merit(psi, eta, r_floor)
    dpsi0 = float(npoly.polyval(0.0, npoly.polyder(psi)))
    return LineSearch(r, psi, dpsi0, curvature_bound(psi),
                      float(npoly.polyval(r, psi) - eta * r))


def step(it: Iterate, xi_plus, ell_plus, s_plus, r_hat: float) -> Iterate:
    if not 0 < r_hat <= 1:
        raise ValueError("step must lie in (0, 1]")
    return Iterate(
        r_hat * np.asarray(xi_plus) + (1 - r_hat) * it.xi,
        [r_hat * lp + (1 - r_hat) * lk for lp, lk in zip(ell_plus, it.ell)],
        r_hat * np.asarray(s_plus) + (1 - r_hat) * it.s,
    )


# ---------------------------------------------------------------------------
# outer loop

@dataclass
class IterationLog:
    k: int
    objective: float
    r_hat: float
    primal_change: float
    dual_change: float
    dual_tol: float
    gap: float
    sub_objective: float
    dpsi0: float
    kappa_hat: float
    stationarity: float
    comp_primal: float
    comp_dual: float
    solver_iterations: int
    N: int
    M: int
    cost_order: int

    FIELDS = None  # filled below


IterationLog.FIELDS = [f for f in IterationLog.__dataclass_fields__ if f != "FIELDS"]


@dataclass
class RunResult:
    iterate: Iterate
    logs: list[IterationLog]
    status: RunStatus
    message: str = ""
    history: list[Iterate] = field(default_factory=list, repr=False)
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.logs)

    @property
    def total_cost(self) -> int:
        return sum(l.cost_order for l in self.logs)

    @property
    def solves(self) -> int:
        return len(self.logs)


def run(prob: NlSosProblem, init: Iterate, cfg: SeqConfig | None = None,
        backend: sdp.Backend | None = None, keep_history: bool = True) -> RunResult:
    cfg = cfg or SeqConfig()
    backend = backend or cfg.backend()
    if init.xi.shape != (prob.dim,) or len(init.ell) != len(prob.constraints):
        raise ValueError("initial iterate does not match the problem dimensions")
    t0 = time.perf_counter()
    it = init.copy()
    logs: list[IterationLog] = []
    history = [it.copy()] if keep_history else []
    status, msg = RunStatus.MAXED, f"no convergence in {cfg.max_iters} iterations"
    for k in range(cfg.max_iters):
        sub = solve_subproblem(prob, it.xi, backend)
        if sub.status is not sdp.Status.OPTIMAL:
            status = RunStatus.FAILED
            msg = f"subproblem {k} ended with status {sub.status.value}"
            log.warning(msg)
            break
        ls = line_search(prob, it.xi, sub.xi_plus, sub.ell_plus, cfg.eta, cfg.r_floor)
        if ls.r_hat <= cfg.r_floor:
            log.warning("iteration %d: step hit the floor %.1e (stagnation)", k, cfg.r_floor)
        new = step(it, sub.xi_plus, sub.ell_plus, sub.s_plus, ls.r_hat)
        dxi = float(np.linalg.norm(new.xi - it.xi))
        dl = float(np.linalg.norm(new.ell_vector() - it.ell_vector()))
        dual_tol = cfg.eps_dual_rel * float(np.linalg.norm(it.ell_vector()))
        kkt = kkt_residual(prob, new, check_membership=False)
        logs.append(IterationLog(
            k, prob.objective(new.xi), ls.r_hat, dxi, dl, dual_tol, sub.gap, sub.objective,
            ls.dpsi0, ls.kappa_hat, kkt.stationarity, kkt.comp_primal, kkt.comp_dual,
            sub.solver_iterations, sub.N, sub.M, sub.cost_order,
        ))
        log.info("k=%d obj=%.9g r=%.3g dxi=%.2e dl=%.2e gap=%.1e", k, logs[-1].objective,
                 ls.r_hat, dxi, dl, sub.gap)
        it = new
        if keep_history:
            history.append(it.copy())
        if dxi <= cfg.eps_primal and dl <= dual_tol:
            status, msg = RunStatus.CONVERGED, f"converged after {k + 1} iterations"
            break
    return RunResult(it, logs, status, msg, history, time.perf_counter() - t0)


def final_kkt(prob: NlSosProblem, res: RunResult, backend=None) -> KktResidual:
    return kkt_residual(prob, res.iterate, check_membership=True, backend=backend)


# ---------------------------------------------------------------------------
# reporting

def logs_to_csv(logs: Sequence, fields: Sequence[str] | None = None, header: str | None = None) -> str:
    fields = list(fields or IterationLog.FIELDS)
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in logs:
        d = asdict(row) if not isinstance(row, dict) else row
        w.writerow([_fmt(d[f]) for f in fields])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return v


def format_table(logs: Sequence[IterationLog]) -> str:
    head = f"{'k':>3} {'objective':>14} {'step':>9} {'|dxi|':>9} {'|dl|':>9} {'gap':>9} {'N^3M':>9}"
    lines = [head]
    for l in logs:
        lines.append(
            f"{l.k:>3} {l.objective:>14.8g} {l.r_hat:>9.3g} {l.primal_change:>9.2e} "
            f"{l.dual_change:>9.2e} {l.gap:>9.1e} {float(l.cost_order):>9.2e}"
        )
    return "\n".join(lines)
