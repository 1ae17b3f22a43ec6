"""Coordinate-descent baseline for the ROA program (V-s iteration).

The bilinear program is split into two convex pieces that alternate:

* multiplier step: ``v`` frozen, bisection on ``b``; every trial ``b`` is an
  SOS feasibility problem in ``(s1, s2)``;
* Lyapunov step: ``s1, s2, b`` frozen, an SOS feasibility problem in ``v``.

The level ``iota`` stays fixed, as in the sequential method, so both methods
solve the same program.  The outer loop stops once ``b`` improves by less
than ``stall_tol`` (our choice of termination rule).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import sdp
from .model import Iterate, NlSosProblem
from .roa import RoaSolution, RoaSpec, build, init_guess
from .seq import build_convex, read_solution

log = logging.getLogger(__name__)


@dataclass
class BaselineConfig:
    b_lo: float = 0.0
    b_hi: float = 10.0
    bisection_tol: float = 1e-4
    max_iters: int = 50
    stall_tol: float = 1e-4
    solver_tol: float = 1e-9

    def __post_init__(self):
        if not self.b_lo < self.b_hi:
            raise ValueError("need b_lo < b_hi")
        if self.bisection_tol <= 0 or self.stall_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    @property
    def bisection_steps(self) -> int:
        return max(0, math.ceil(math.log2((self.b_hi - self.b_lo) / self.bisection_tol)))

    def backend(self) -> sdp.InteriorPointSolver:
        return sdp.InteriorPointSolver(gap_tol=self.solver_tol, feas_tol=self.solver_tol)


@dataclass
class SolveRecord:
    kind: str
    N: int
    M: int
    feasible: bool

    @property
    def cost_order(self) -> int:
        return sdp.cost_order(self.N, self.M)


@dataclass
class _Ctx:
    spec: RoaSpec
    prob: NlSosProblem
    backend: object
    solves: list[SolveRecord] = field(default_factory=list)


def _feasible(ctx: _Ctx, xi: np.ndarray, active, constraints, kind: str):
    cp = build_convex(ctx.prob, xi, active, constraints=constraints, with_cost=False, exact=True)
    sol = sdp.solve(cp.prog, ctx.backend)
    ok = sol.status is sdp.Status.OPTIMAL
    ctx.solves.append(SolveRecord(kind, cp.prog.N, cp.prog.M, ok))
    if not ok:
        return None
    xi_new, _, _ = read_solution(ctx.prob, cp, sol, xi)
    return xi_new


def multiplier_step(spec: RoaSpec, v: np.ndarray | None = None, cfg: BaselineConfig | None = None,
                    xi: np.ndarray | None = None, ctx: _Ctx | None = None):
    """Largest feasible ``b`` (by bisection) for frozen ``v``, with its multipliers.

    Returns ``(xi, b, steps)`` where ``xi`` holds the multipliers of the best
    feasible trial, or ``(None, b_lo, steps)`` if no trial was feasible.
    """
    cfg = cfg or BaselineConfig()
    if ctx is None:
        prob = build(spec)
        ctx = _Ctx(spec, prob, cfg.backend())
    prob = ctx.prob
    if xi is None:
        xi = init_guess(spec, prob).xi
    xi = np.array(xi, dtype=float)
    if v is not None:
        xi[prob.slice("v")] = v
    bslot = prob.slice("b").start
    lo, hi = cfg.b_lo, cfg.b_hi
    best = None
    steps = 0
    while hi - lo > cfg.bisection_tol:
        mid = 0.5 * (lo + hi)
        trial = xi.copy()
        trial[bslot] = mid
        got = _feasible(ctx, trial, ["s1", "s2"], [0, 1], "multiplier")
        steps += 1
        if got is None:
            hi = mid
        else:
            lo, best = mid, got
    return best, lo, steps


def lyapunov_step(spec: RoaSpec, xi: np.ndarray, cfg: BaselineConfig | None = None, ctx: _Ctx | None = None):
    """Feasible ``v`` for frozen ``s1, s2, b`` (objective 0); ``None`` if the solve fails."""
    cfg = cfg or BaselineConfig()
    if ctx is None:
        prob = build(spec)
        ctx = _Ctx(spec, prob, cfg.backend())
    return _feasible(ctx, np.asarray(xi, dtype=float), ["v"], None, "lyapunov")


@dataclass
class BaselineLog:
    k: int
    objective: float
    b: float
    solves: int
    bisection_steps: int
    cost_order: int
    N: int
    M: int

    FIELDS = None


BaselineLog.FIELDS = [f for f in BaselineLog.__dataclass_fields__ if f != "FIELDS"]


@dataclass
class BaselineResult:
    xi: np.ndarray
    logs: list[BaselineLog]
    status: str
    message: str
    solves: list[SolveRecord]
    history: list[np.ndarray] = field(default_factory=list, repr=False)
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.logs)

    @property
    def total_cost(self) -> int:
        return sum(s.cost_order for s in self.solves)

    @property
    def total_solves(self) -> int:
        return len(self.solves)

    @property
    def b(self) -> float:
        return self.logs[-1].b if self.logs else math.nan

    def iterate(self, prob: NlSosProblem) -> Iterate:
        return Iterate.primal(prob, self.xi)


def run_baseline(spec: RoaSpec, init: Iterate | None = None, cfg: BaselineConfig | None = None,
                 backend=None) -> BaselineResult:
    cfg = cfg or BaselineConfig()
    prob = build(spec)
    ctx = _Ctx(spec, prob, backend or cfg.backend())
    xi = (init or init_guess(spec, prob)).xi.copy()
    t0 = time.perf_counter()
    logs, history = [], []
    b_prev = -math.inf
    status, msg = "maxed", f"no stall within {cfg.max_iters} iterations"
    for k in range(cfg.max_iters):
        n0 = len(ctx.solves)
        got, b, steps = multiplier_step(spec, None, cfg, xi, ctx)
        if got is None:
            status, msg = "stalled", f"multiplier step infeasible for every trial b in iteration {k}"
            log.warning(msg)
            break
        got[prob.slice("b").start] = b
        v_new = lyapunov_step(spec, got, cfg, ctx)
        if v_new is None:
            # keep the multiplier-step point; flagged as numerical
            status, msg = "failed", f"Lyapunov step failed in iteration {k}"
            log.warning(msg)
            xi = got
        else:
            xi = v_new
        recs = ctx.solves[n0:]
        logs.append(BaselineLog(k, -b, b, len(recs), steps, sum(r.cost_order for r in recs),
                                recs[0].N, recs[0].M))
        history.append(xi.copy())
        log.info("baseline k=%d b=%.9g solves=%d", k, b, len(recs))
        if status == "failed":
            break
        if b - b_prev < cfg.stall_tol:
            status, msg = "stalled", f"b improved by less than {cfg.stall_tol:g} after {k + 1} iterations"
            break
        b_prev = b
    return BaselineResult(xi, logs, status, msg, ctx.solves, history, time.perf_counter() - t0)


def solution(spec: RoaSpec, res: BaselineResult) -> RoaSolution:
    return RoaSolution.from_xi(build(spec), res.xi)
