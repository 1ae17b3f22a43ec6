import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqsos import gram, sdp
from seqsos.poly import CoeffVector, MonomialBasis, Polynomial, basis, parse_polynomial as P
from seqsos.roa import build, init_guess, van_der_pol, RoaSpec
from seqsos.seq import solve_subproblem

MOTZKIN = P("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1")


def _matched(blocks: gram.SosBlocks, Q: np.ndarray) -> np.ndarray:
    """Coefficient vector produced by the Gram entries of Q."""
    v = sdp.svec(Q)
    tri = {}
    r, c = sdp._tril(blocks.size)
    for k, (i, j) in enumerate(zip(r, c)):
        tri[(i, j)] = v[k]
    return np.array([sum(w * tri[(i, j)] for i, j, w in row) for row in blocks.pattern])


def test_blocks_for_sum_of_squares():
    blk = gram.sos_constraint_blocks(P("x1^2 + x2^2"), 1)
    assert [str(Polynomial.monomial(m)) for m in blk.zeta] == ["1.0", "x1", "x2"]
    # rows: J xi - G(Q) = rhs with no decision variables, so G(Q) = -rhs = coefficients
    big = blk.basis
    assert -blk.rhs[big.index[(0, 0)]] == 0
    assert -blk.rhs[big.index[(2, 0)]] == 1
    assert -blk.rhs[big.index[(0, 2)]] == 1
    assert blk.pattern[big.index[(2, 0)]] == ((1, 1, 1.0),)
    assert blk.pattern[big.index[(0, 0)]] == ((0, 0, 1.0),)


def test_blocks_for_zero_target():
    blk = gram.sos_constraint_blocks(Polynomial.zero(2), 1)
    assert not np.any(blk.rhs)
    assert _matched(blk, np.zeros((3, 3))) == pytest.approx(-blk.rhs)


def test_blocks_rank_one_square():
    blk = gram.sos_constraint_blocks(P("(x1 - x2)^2"), 1)
    v = np.array([0.0, 1.0, -1.0])
    assert _matched(blk, np.outer(v, v)) == pytest.approx(-blk.rhs, abs=1e-15)


def test_blocks_reject_terms_below_range():
    with pytest.raises(ValueError):
        gram.sos_constraint_blocks(P("1 + x1^2", 1), 1, lowhalf=1)


def test_check_sos_square():
    cert = gram.check_sos(P("x1^2 - 2*x1*x2 + x2^2"))
    assert isinstance(cert, gram.SosCertificate)
    assert cert.accepted()
    assert cert.gram.polynomial().allclose(P("(x1 - x2)^2"), 1e-6)


def test_check_sos_indefinite():
    res = gram.check_sos(P("x1*x2"))
    assert isinstance(res, gram.Refusal)
    assert not res.accepted()


def test_motzkin_refused():
    assert isinstance(gram.check_sos(MOTZKIN), gram.Refusal)
    assert gram.membership_violation(MOTZKIN) > 1e-4


def test_motzkin_gram_sdp_infeasible_in_reference_solver():
    cp = pytest.importorskip("cvxpy")
    zeta = MonomialBasis(2, 3)
    big = MonomialBasis(2, 6)
    Q = cp.Variable((len(zeta), len(zeta)), symmetric=True)
    exprs = {m: 0 for m in big}
    for i, mi in enumerate(zeta):
        for j, mj in enumerate(zeta):
            exprs[tuple(a + b for a, b in zip(mi, mj))] += Q[i, j]
    cons = [Q >> 0] + [exprs[m] == MOTZKIN.coeff(m) for m in big]
    prob = cp.Problem(cp.Minimize(0), cons)
    prob.solve(solver="CLARABEL")
    assert prob.status in ("infeasible", "infeasible_inaccurate")


def test_odd_degree_refused():
    assert isinstance(gram.check_sos(P("x1^3 + x1^2", 1)), gram.Refusal)


def test_certificate_json():
    cert = gram.check_sos(P("1 + x1^2", 1))
    rec = json.loads(cert.to_json())
    assert rec["basis"] == ["1", "x1"]
    assert len(rec["Q"]) == 4
    assert rec["min_eig"] >= -1e-8 and rec["residual"] <= 1e-6


def test_extract_dual_zero():
    B = basis(2, 2)
    ell = gram.extract_dual(np.zeros(len(B)), B)
    assert ell.norm() == 0
    with pytest.raises(ValueError):
        gram.extract_dual(np.zeros(3), B)


def test_dual_of_uncoupled_strict_constraint_vanishes():
    # feasibility problem: x1^2 + 1 in SOS, zero objective
    blocks = gram.sos_constraint_blocks(P("x1^2 + 1", 1), 1)
    B = sdp.ProgramBuilder()
    _, rows = gram.emit(B, blocks, [])
    sol = sdp.solve(B.build())
    assert sol.status is sdp.Status.OPTIMAL
    ell = gram.extract_dual(sol.eq_duals[rows], blocks.basis)
    assert ell.norm() <= 1e-6


def test_subproblem_duals_have_psd_moment_matrices():
    spec = RoaSpec(van_der_pol())
    prob = build(spec)
    sub = solve_subproblem(prob, init_guess(spec, prob).xi)
    assert sub.status is sdp.Status.OPTIMAL
    for c, y, B, h, lo in zip(prob.constraints, sub.ell_plus, prob.bases, prob.halfdegs, prob.lowhalfs):
        Mm = gram.moment_matrix(CoeffVector(B, y), h, lo)
        scale = 1 + np.max(np.abs(Mm))
        assert np.linalg.eigvalsh(Mm)[0] >= -1e-7 * scale, c.name


@given(st.integers(1, 3), st.integers(0, 3), st.integers(0, 3))
def test_gram_pattern_partitions_entries(n, h, lo):
    lo = min(lo, h)
    pattern = gram.gram_pattern(n, h, lo)
    m = len(MonomialBasis(n, h, lo))
    seen = Counter((i, j) for row in pattern for i, j, _ in row)
    assert set(seen) == {(i, j) for i in range(m) for j in range(i + 1)}
    assert all(v == 1 for v in seen.values())
    assert len(pattern) == len(MonomialBasis(n, 2 * h, 2 * lo))


@st.composite
def sos_polys(draw):
    n = draw(st.integers(1, 2))
    B = basis(n, 2)
    k = draw(st.integers(1, 3))
    acc = Polynomial.zero(n)
    for _ in range(k):
        cs = draw(st.lists(st.integers(-3, 3), min_size=len(B), max_size=len(B)))
        q = Polynomial.from_coeffs(B, cs)
        acc = acc + q * q
    return acc


@settings(max_examples=25, deadline=None)
@given(sos_polys())
def test_sums_of_squares_accepted(p):
    if p.is_zero():
        return
    cert = gram.check_sos(p + Polynomial.constant(p.nvars, 1e-3))
    assert isinstance(cert, gram.SosCertificate)
    assert cert.residual <= 1e-6 and cert.min_eig >= -1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**16))
def test_gram_polynomial_matches_quadratic_form(n, seed):
    rng = np.random.default_rng(seed)
    z = basis(n, 2)
    G = rng.normal(size=(len(z), len(z)))
    Q = G @ G.T
    p = gram.gram_polynomial(z, Q)
    x = rng.normal(size=n)
    zx = z.evaluate(x)
    assert p(x) == pytest.approx(zx @ Q @ zx, rel=1e-9, abs=1e-9)
