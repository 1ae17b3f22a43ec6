import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqsos.model import (
    ConstraintExpr,
    DecisionVar,
    Factor,
    Iterate,
    NlSosProblem,
    apply_adjoint,
    apply_deriv,
    eval_g,
    format_expr,
    jacobian,
    kkt_residual,
    lagrangian,
    pair_constraints,
    parse_expr,
)
from seqsos.poly import MonomialBasis, ParseError, Polynomial, basis, parse_polynomial as P
from seqsos.seq import gamma_k

ONE1 = Polynomial.constant(1, 1.0)


def sv_problem(iota=0.0, affine=None):
    """g(v, s) = s*v - iota*s (+ affine offset) in one variable."""
    terms = [(ONE1, (Factor("s"), Factor("v")))]
    if iota:
        terms.append((ONE1 * -iota, (Factor("s"),)))
    if affine is not None:
        terms.append((affine, ()))
    vars_ = [DecisionVar("v", basis(1, 2)), DecisionVar("s", basis(1, 2), sos=True)]
    return NlSosProblem(1, vars_, np.zeros(6), [ConstraintExpr("c", terms)])


def test_eval_bilinear_example():
    prob = sv_problem()
    xi = prob.join({"v": P("x1^2", 1), "s": P("1 + x1^2", 1)})
    assert eval_g(prob, xi)[0] == P("x1^2 + x1^4", 1)


def test_eval_zero_point_without_offset():
    prob = sv_problem(iota=2.0)
    assert eval_g(prob, np.zeros(prob.dim))[0].is_zero()


def test_eval_affine_only():
    c = P("3 - x1^2", 1)
    prob = NlSosProblem(1, [DecisionVar("v", basis(1, 2))], np.zeros(3), [ConstraintExpr("c", [(c, ())])])
    rng = np.random.default_rng(0)
    for _ in range(3):
        assert eval_g(prob, rng.normal(size=3))[0] == c


def test_deriv_product_rule_example():
    iota = 1.5
    prob = sv_problem(iota)
    v0, s0 = P("x1^2 + 0.5", 1), P("2 + x1^2", 1)
    dv, ds = P("x1 - 1", 1), P("x1^2", 1)
    got = apply_deriv(prob, prob.join({"v": v0, "s": s0}), prob.join({"v": dv, "s": ds}))[0]
    assert got.allclose(s0 * dv + (v0 - iota) * ds, 1e-14)


def test_deriv_of_affine_map_independent_of_point():
    c = P("x1", 1)
    prob = NlSosProblem(1, [DecisionVar("v", basis(1, 2))], np.zeros(3),
                        [ConstraintExpr("c", [(ONE1 * 2.0, (Factor("v"),)), (c, ())])])
    d = np.array([1.0, -2.0, 0.5])
    a = apply_deriv(prob, np.zeros(3), d)[0]
    b = apply_deriv(prob, np.array([5.0, 1.0, -3.0]), d)[0]
    assert a == b == Polynomial.from_coeffs(basis(1, 2), 2 * d)


def test_adjoint_of_linear_map_is_transpose():
    prob = NlSosProblem(1, [DecisionVar("v", basis(1, 2))], np.zeros(3),
                        [ConstraintExpr("c", [(P("1 + x1", 1), (Factor("v"),))])])
    A = jacobian(prob, np.zeros(3))[0]
    ell = [np.arange(1.0, 1.0 + A.shape[0])]
    assert apply_adjoint(prob, np.ones(3), ell) == pytest.approx(A.T @ ell[0])


def test_adjoint_of_zero_dual():
    prob = sv_problem(1.0)
    assert not np.any(apply_adjoint(prob, np.ones(prob.dim), [np.zeros(len(prob.bases[0]))]))


def test_lagrangian_examples():
    prob = sv_problem(1.0)
    prob.cost[:] = np.arange(prob.dim)
    xi = np.linspace(-1, 1, prob.dim)
    assert lagrangian(prob, Iterate.primal(prob, xi)) == pytest.approx(prob.cost @ xi)
    it = Iterate(np.zeros(prob.dim), [np.ones(len(prob.bases[0]))], np.zeros(prob.dim))
    assert lagrangian(prob, it) == 0


def test_kkt_residual_zero_dual_is_cost_norm():
    prob = sv_problem()
    prob.cost[:] = [3.0, 0, 0, 4.0, 0, 0]
    r = kkt_residual(prob, Iterate.primal(prob, np.zeros(prob.dim)), check_membership=False)
    assert r.stationarity == pytest.approx(5.0)


def test_kkt_residual_exact_point():
    # min c  s.t.  c - 1 = 0  (scalar), KKT multiplier 1
    prob = NlSosProblem(1, [DecisionVar("c", basis(1, 0))], np.array([1.0]),
                        [ConstraintExpr("eq", [(ONE1, (Factor("c"),)), (ONE1 * -1.0, ())], "zero")])
    it = Iterate(np.array([1.0]), [np.array([1.0])], np.zeros(1))
    r = kkt_residual(prob, it)
    assert r.max() == 0.0


def test_undeclared_variable_rejected():
    with pytest.raises(ValueError):
        NlSosProblem(1, [DecisionVar("v", basis(1, 2))], np.zeros(3),
                     [ConstraintExpr("c", [(ONE1, (Factor("w"),))])])


def test_sos_variable_needs_even_range():
    with pytest.raises(ValueError):
        DecisionVar("s", basis(1, 3), sos=True)
    with pytest.raises(ValueError):
        DecisionVar("s", MonomialBasis(1, 4, 1), sos=True)


# ---- random bilinear instances --------------------------------------------

def random_instance(seed, bilinear_only=False):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    vars_ = [
        DecisionVar("v", MonomialBasis(n, int(rng.integers(1, 4)))),
        DecisionVar("s", MonomialBasis(n, 2 * int(rng.integers(0, 2))), sos=True),
        DecisionVar("w", MonomialBasis(n, int(rng.integers(0, 2)))),
    ]
    names = [v.name for v in vars_]

    def coef():
        B = basis(n, 1)
        return Polynomial.from_coeffs(B, rng.normal(size=len(B)))

    cons = []
    for c in range(int(rng.integers(1, 4))):
        terms = []
        for _ in range(int(rng.integers(1, 5))):
            k = 2 if bilinear_only else int(rng.integers(0, 3))
            fs = []
            for _ in range(k):
                d = None if rng.random() < 0.7 else int(rng.integers(0, n))
                fs.append(Factor(str(rng.choice(names)), d))
            terms.append((coef(), tuple(fs)))
        cons.append(ConstraintExpr(f"c{c}", terms, "sos" if rng.random() < 0.7 else "zero"))
    dim = sum(v.dim for v in vars_)
    prob = NlSosProblem(n, vars_, rng.normal(size=dim), cons)
    return prob, rng


def _vec(prob, polys):
    return np.concatenate([p.coeffs(b) for p, b in zip(polys, prob.bases)])


@pytest.mark.parametrize("seed", range(50))
def test_derivative_matches_central_differences(seed):
    prob, rng = random_instance(seed)
    xi, d = rng.normal(size=(2, prob.dim))
    h = 1e-5
    fd = (_vec(prob, eval_g(prob, xi + h * d)) - _vec(prob, eval_g(prob, xi - h * d))) / (2 * h)
    ad = _vec(prob, apply_deriv(prob, xi, d))
    assert np.linalg.norm(fd - ad) <= 1e-6 * max(np.linalg.norm(ad), 1.0)


@pytest.mark.parametrize("seed", range(100))
def test_adjoint_identity(seed):
    prob, rng = random_instance(1000 + seed)
    xi, d = rng.normal(size=(2, prob.dim))
    ell = [rng.normal(size=len(b)) for b in prob.bases]
    lhs = apply_adjoint(prob, xi, ell) @ d
    rhs = pair_constraints(prob, ell, apply_deriv(prob, xi, d))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_derivative_is_linear_in_direction(seed, a, b):
    prob, rng = random_instance(seed)
    xi, d1, d2 = rng.normal(size=(3, prob.dim))
    lhs = _vec(prob, apply_deriv(prob, xi, a * d1 + b * d2))
    rhs = a * _vec(prob, apply_deriv(prob, xi, d1)) + b * _vec(prob, apply_deriv(prob, xi, d2))
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_euler_identity_for_bilinear_maps(seed):
    prob, rng = random_instance(seed, bilinear_only=True)
    xi = rng.normal(size=prob.dim)
    g = _vec(prob, eval_g(prob, xi))
    assert _vec(prob, apply_deriv(prob, xi, xi)) == pytest.approx(2 * g, rel=1e-9, abs=1e-9)
    assert _vec(prob, gamma_k(prob, xi)) == pytest.approx(g, rel=1e-9, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_first_order_expansion_error_is_quadratic(seed):
    prob, rng = random_instance(seed)
    xi, d = rng.normal(size=(2, prob.dim))
    g0 = _vec(prob, eval_g(prob, xi))
    lin = _vec(prob, apply_deriv(prob, xi, d))

    def err(h):
        return np.linalg.norm(_vec(prob, eval_g(prob, xi + h * d)) - g0 - h * lin)

    e1, e2 = err(1e-2), err(5e-3)
    if e1 < 1e-12:  # affine instance
        return
    assert e2 / e1 == pytest.approx(0.25, rel=1e-6)


def test_jacobian_agrees_with_apply_deriv():
    prob, rng = random_instance(7)
    xi, d = rng.normal(size=(2, prob.dim))
    for J, p, b in zip(jacobian(prob, xi), apply_deriv(prob, xi, d), prob.bases):
        assert J @ d == pytest.approx(p.coeffs(b), rel=1e-12, abs=1e-12)


# ---- expression syntax ----------------------------------------------------

def test_expr_round_trip():
    text = "@s*@v + (-2.0*x1)*d2(@v) + (x1^2)"
    e = parse_expr(text, 2, declared=["s", "v"])
    again = parse_expr(format_expr(e.as_terms()), 2, declared=["s", "v"])
    assert again.as_terms() == e.as_terms()


def test_expr_expansion():
    e = parse_expr("(@v - 1)*(@v + x1)", 1, declared=["v"])
    terms = dict((fs, c) for c, fs in e.as_terms())
    assert terms[(Factor("v"), Factor("v"))] == ONE1
    assert terms[(Factor("v"),)] == P("x1 - 1", 1)
    assert terms[()] == P("-x1", 1)


def test_expr_errors_have_positions():
    with pytest.raises(ParseError) as e:
        parse_expr("@v + @w", 1, line=3, declared=["v"])
    assert "line 3, column 6" in str(e.value)
    with pytest.raises(ParseError):
        parse_expr("d3(@v)", 2, declared=["v"])
