import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqsos.poly import (
    CoeffVector,
    Monomial,
    MonomialBasis,
    ParseError,
    Polynomial,
    basis,
    format_monomial,
    format_polynomial,
    norm,
    num_monomials,
    pair,
    parse_polynomial,
)

P = parse_polynomial


# ---- worked examples -------------------------------------------------------

def test_add_examples():
    assert P("x1^2 + 1", 1) + P("-1", 1) == P("x1^2", 1)
    p = P("3*x1*x2 - x2^3", 2)
    assert p + Polynomial.zero(2) == p
    assert P("x1 + x2") + P("x1 - x2") == P("2*x1", 2)


def test_mul_examples():
    assert P("x1 + x2") * P("x1 - x2") == P("x1^2 - x2^2")
    p = P("1.5*x1^2 - x1*x2", 2)
    assert p * Polynomial.constant(2, 1.0) == p
    assert P("x1^2 + x2^2") ** 2 == P("x1^4 + 2*x1^2*x2^2 + x2^4")


def test_gradient_examples():
    assert P("x1^2*x2").gradient() == [P("2*x1*x2"), P("x1^2", 2)]
    assert P("7", 3).gradient() == [Polynomial.zero(3)] * 3
    assert P("x1^2 + x2^2").gradient() == [P("2*x1", 2), P("2*x2", 2)]


def test_eval_examples():
    assert P("x1^2 + x2^2")((1, 1)) == 2
    p = P("4 - x1 + x1^2*x2", 2)
    assert p((0, 0)) == 4
    assert P("1.5*x1^2 - x1*x2 + x2^2")((1, 2)) == pytest.approx(3.5, abs=0)


def test_basis_sizes():
    assert len(basis(2, 3)) == 10
    assert basis(1, 0).monomials == (Monomial((0,)),)
    assert len(basis(4, 2)) == 15
    assert num_monomials(4, 2) == 15


def test_graded_lex_order():
    names = [format_monomial(m) for m in basis(2, 2)]
    assert names == ["1", "x1", "x2", "x1^2", "x1*x2", "x2^2"]


def test_pair_examples():
    B = basis(2, 2)
    ell = CoeffVector(B, np.eye(len(B))[B.index[(2, 0)]])
    assert pair(ell, P("3*x1^2", 2)) == 3
    assert pair(ell, Polynomial.zero(2)) == 0
    assert pair(CoeffVector.zeros(B), P("x1^2 + x2", 2)) == 0


def test_norm_examples():
    assert norm(P("3*x1", 1)) == 3
    assert norm(Polynomial.zero(2)) == 0
    assert norm(P("x1 + x2")) == pytest.approx(math.sqrt(2), rel=1e-15)


def test_degree_range_basis():
    B = MonomialBasis(2, 4, 2)
    assert all(2 <= m.degree <= 4 for m in B)
    assert len(B) == len(basis(2, 4)) - len(basis(2, 1))
    with pytest.raises(ValueError):
        P("1 + x1^2", 2).coeffs(B)


def test_parse_whitespace_and_implicit_product():
    a = P("3.5*x1^2*x2 - 1e-6*x2^4")
    b = P("  3.5 x1^2 x2-1e-6 *x2 ^ 4 ")
    assert a == b


@pytest.mark.parametrize("text", ["x1 +", "x1 ** 2", "2*(x1", "y1", "x1^-1"])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        P(text, 2)


def test_parse_error_column():
    with pytest.raises(ParseError) as e:
        P("x1 + $x2", 2)
    assert e.value.pos == 5


def test_variable_out_of_range():
    with pytest.raises(ParseError):
        P("x3", 2)


# ---- properties ------------------------------------------------------------

N = 3


@st.composite
def polys(draw, nvars=N, maxdeg=3):
    mons = basis(nvars, maxdeg).monomials
    sel = draw(st.lists(st.sampled_from(mons), max_size=6, unique=True))
    coefs = draw(st.lists(st.integers(-5, 5), min_size=len(sel), max_size=len(sel)))
    return Polynomial(nvars, dict(zip(sel, [float(c) for c in coefs])))


points = st.lists(st.floats(-2, 2, allow_nan=False), min_size=N, max_size=N)


@given(polys(), polys(), polys())
def test_ring_axioms(p, q, r):
    # integer coefficients keep every identity exact
    assert p + q == q + p
    assert (p + q) + r == p + (q + r)
    assert p * q == q * p
    assert (p * q) * r == p * (q * r)
    assert p * (q + r) == p * q + p * r
    assert p - p == Polynomial.zero(N)


@given(polys(), polys(), points)
def test_evaluation_homomorphism(p, q, x):
    assert (p + q)(x) == pytest.approx(p(x) + q(x), abs=1e-9)
    assert (p * q)(x) == pytest.approx(p(x) * q(x), rel=1e-9, abs=1e-9)


@given(polys(), polys(), st.integers(0, N - 1))
def test_product_rule(p, q, i):
    assert (p * q).diff(i) == p.diff(i) * q + p * q.diff(i)


@given(polys())
def test_print_parse_round_trip(p):
    assert parse_polynomial(format_polynomial(p), N) == p


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False), min_size=6, max_size=6))
def test_round_trip_is_exact_for_floats(cs):
    p = Polynomial.from_coeffs(basis(2, 2), cs)
    assert parse_polynomial(str(p), 2) == p


@given(polys(), points)
def test_eval_many_matches_eval(p, x):
    X = np.array([x, [0.5 * t for t in x]])
    got = p.eval_many(X)
    assert got[0] == pytest.approx(p(x), abs=1e-9)
    assert got[1] == pytest.approx(p(X[1]), abs=1e-9)


@given(polys())
def test_coefficient_vector_round_trip(p):
    B = basis(N, 3)
    assert CoeffVector.of(p, B).to_polynomial() == p
    assert norm(p) == pytest.approx(CoeffVector.of(p, B).norm())


@settings(max_examples=50)
@given(polys(), points)
def test_euler_homogeneous_part(p, x):
    # sum_i x_i d_i p = sum_alpha |alpha| c_alpha x^alpha
    xs = [Polynomial.var(N, i) for i in range(N)]
    lhs = sum((xs[i] * p.diff(i) for i in range(N)), Polynomial.zero(N))
    rhs = Polynomial(N, {m: m.degree * c for m, c in p.items()})
    assert lhs == rhs
