"""Acceptance criteria 2 to 11, each recorded as one PASS/FAIL line.

Criterion 1 is a statement about which published numbers can be reproduced and
has nothing to execute.  Heavy runs are shared through module fixtures.
"""

import time

import numpy as np
import pytest

from seqsos import gram, sdp
from seqsos.baseline import run_baseline
from seqsos.model import apply_adjoint, apply_deriv, eval_g, pair_constraints
from seqsos.poly import parse_polynomial as P
from seqsos.roa import RoaSpec, build, cubic_1d, init_guess, van_der_pol, verify_certificate
from seqsos.seq import RunStatus, SeqConfig, final_kkt, run

from conftest import VERDICTS
from test_model import _vec, random_instance
from test_sdp import SOLVER, eigen_bound_program, random_feasible, trace_program


def verdict(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


class Timed:
    def __init__(self, spec, keep_history=False):
        self.spec = spec
        self.prob = build(spec)
        self.init = init_guess(spec, self.prob)
        t0 = time.perf_counter()
        self.res = run(self.prob, self.init, keep_history=keep_history)
        self.wall = time.perf_counter() - t0


@pytest.fixture(scope="module")
def toy():
    return Timed(RoaSpec(cubic_1d(), p=P("x1^2", 1)))


@pytest.fixture(scope="module")
def vdp2():
    return Timed(RoaSpec(van_der_pol(), deg_v=2), keep_history=True)


@pytest.fixture(scope="module")
def vdp4():
    return Timed(RoaSpec(van_der_pol(), deg_v=4))


def test_criterion_02_cubic_roa(toy):
    r = toy.res
    final = r.logs[-1].objective
    ok = r.status is RunStatus.CONVERGED and -1.0 <= final <= -0.99 and r.iterations <= 25 and toy.wall < 10
    verdict(2, ok, f"1-D cubic -b = {final:.7f} in {r.iterations} iterations, {toy.wall:.2f} s")


def test_criterion_03_van_der_pol(vdp2, vdp4):
    cfg = SeqConfig()
    parts = []
    ok = True
    for name, t in (("d0=2", vdp2), ("d0=4", vdp4)):
        r, last = t.res, t.res.logs[-1]
        gaps = max(l.gap / (1 + abs(l.sub_objective)) for l in r.logs)
        kkt = final_kkt(t.prob, r).max()
        ok &= (r.status is RunStatus.CONVERGED and last.primal_change <= cfg.eps_primal
               and last.dual_change <= last.dual_tol and gaps <= 1e-6 and kkt <= 1e-5)
        parts.append(f"{name} b = {-last.objective:.7f} ({r.iterations} it, max rel gap {gaps:.1e}, kkt {kkt:.1e})")
    b2, b4 = -vdp2.res.logs[-1].objective, -vdp4.res.logs[-1].objective
    wall = vdp2.wall + vdp4.wall
    ok &= b4 >= b2 - 1e-6 and wall < 120
    verdict(3, ok, "; ".join(parts) + f"; total {wall:.1f} s")


def test_criterion_04_certificates(toy, vdp2, vdp4):
    details = []
    ok = True
    for name, t in (("cubic", toy), ("vdp d0=2", vdp2), ("vdp d0=4", vdp4)):
        rep = verify_certificate(t.spec, t.res.iterate, nsamples=10_000, prob=t.prob)
        worst_res = max(d["residual"] for d in rep.gram_details.values())
        worst_eig = min(d["min_eig"] for d in rep.gram_details.values())
        ok &= (rep.gram_ok and worst_res <= gram.RES_TOL and worst_eig >= -gram.EIG_TOL
               and rep.sampling_ok and not rep.witnesses)
        details.append(f"{name} residual {worst_res:.1e} min_eig {worst_eig:.1e} witnesses {len(rep.witnesses)}")
    verdict(4, ok, "; ".join(details))


def _theta(it):
    return np.concatenate([it.xi, *it.ell, it.s])


def test_criterion_05_linear_rate(vdp2):
    hist = [_theta(h) for h in vdp2.res.history]
    star = hist[-1]
    dist = [np.linalg.norm(h - star) for h in hist]
    # the last iterate is the reference point, so the five ratios end one step before it
    ratios = [dist[k + 1] / dist[k] for k in range(len(dist) - 7, len(dist) - 2)]
    alpha = max(ratios)
    verdict(5, alpha <= 0.9, f"alpha = {alpha:.3f} over ratios {', '.join(f'{q:.3f}' for q in ratios)}")


def test_criterion_06_line_search(toy, vdp2, vdp4):
    eta = SeqConfig().eta
    ok = True
    worst = np.inf
    for t in (toy, vdp2, vdp4):
        logs = t.res.logs
        ok &= all(l.dpsi0 <= 1e-8 and l.r_hat >= 1e-8 for l in logs)
        for l in logs[-3:]:
            bound = min(1.0, eta / l.kappa_hat) if l.kappa_hat > 0 else 1.0
            worst = min(worst, l.r_hat / bound)
            ok &= l.r_hat >= bound
    verdict(6, ok, f"min r_hat / min(1, eta/kappa_hat) over the last 3 iterations = {worst:.3g}")


def test_criterion_07_fixed_point(toy, vdp2):
    ok = True
    changes = []
    for t in (toy, vdp2):
        again = run(t.prob, t.res.iterate)
        ok &= again.iterations == 1 and again.logs[0].primal_change <= 1e-6
        changes.append(f"{again.logs[0].primal_change:.1e}")
    verdict(7, ok, f"restart primal change {', '.join(changes)} in one iteration")


def test_criterion_08_derivatives():
    fd_worst = 0.0
    for seed in range(50):
        prob, rng = random_instance(seed)
        xi, d = rng.normal(size=(2, prob.dim))
        h = 1e-5
        fd = (_vec(prob, eval_g(prob, xi + h * d)) - _vec(prob, eval_g(prob, xi - h * d))) / (2 * h)
        ad = _vec(prob, apply_deriv(prob, xi, d))
        fd_worst = max(fd_worst, np.linalg.norm(fd - ad) / max(np.linalg.norm(ad), 1.0))
    adj_worst = 0.0
    for seed in range(100):
        prob, rng = random_instance(1000 + seed)
        xi, d = rng.normal(size=(2, prob.dim))
        ell = [rng.normal(size=len(b)) for b in prob.bases]
        lhs = apply_adjoint(prob, xi, ell) @ d
        rhs = pair_constraints(prob, ell, apply_deriv(prob, xi, d))
        adj_worst = max(adj_worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    verdict(8, fd_worst <= 1e-6 and adj_worst <= 1e-10,
            f"finite-difference rel err {fd_worst:.1e}, adjoint mismatch {adj_worst:.1e}")


def test_criterion_09_reference_solver():
    ex = [sdp.solve(eigen_bound_program()), sdp.solve(trace_program(1.0))]
    ok = all(s.status is sdp.Status.OPTIMAL and abs(s.obj_primal - 1.0) <= 1e-8 for s in ex)
    ok &= sdp.solve(trace_program(-1.0)).status is sdp.Status.INFEASIBLE
    worst = 0.0
    for seed in range(100):
        prog = random_feasible(seed)
        a = SOLVER.solve(prog)
        ok &= a.status is sdp.Status.OPTIMAL
        worst = max(worst, abs(a.obj_primal - a.obj_dual) / (1 + abs(a.obj_primal)))
        if seed % 10 == 0:
            b = SOLVER.solve(prog)
            ok &= np.array_equal(a.primal, b.primal) and np.array_equal(a.eq_duals, b.eq_duals)
    ok &= worst <= 1e-8
    verdict(9, ok, f"analytic examples solved, worst random relative gap {worst:.1e}, repeat runs identical")


def test_criterion_10_against_baseline(vdp4):
    t0 = time.perf_counter()
    base = run_baseline(vdp4.spec, vdp4.init)
    wall = time.perf_counter() - t0
    seq = vdp4.res
    seq_val, base_val = seq.logs[-1].objective, -base.b
    ok = seq.total_cost < base.total_cost and seq_val <= base_val + 1e-3
    verdict(10, ok, f"sequential -b {seq_val:.6f} cost {seq.total_cost:.3e} ({seq.solves} solves, "
                    f"{vdp4.wall:.1f} s); baseline -b {base_val:.6f} cost {base.total_cost:.3e} "
                    f"({base.total_solves} solves, {wall:.1f} s, {base.status})")


def test_criterion_11_cost_model():
    got = sdp.cost_order(47, 21)
    verdict(11, got == 2_180_283, f"cost_order(47, 21) = {got:,}")
