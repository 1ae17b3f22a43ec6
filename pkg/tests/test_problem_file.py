import pytest

from seqsos import problem_file as pfile
from seqsos.model import Factor
from seqsos.poly import ParseError, parse_polynomial as P
from seqsos.roa import RoaSpec, van_der_pol
from seqsos.seq import RunStatus, run

DATA = ["van_der_pol.prob", "cubic_1d.prob", "cubic_1d_generic.prob"]


def test_vdp_file_matches_builtin():
    spec = pfile.load(pfile.data_path("van_der_pol.prob")).to_spec()
    ref = RoaSpec(van_der_pol())
    assert spec.system.n == 2
    assert [str(f) for f in spec.system.phi] == [str(f) for f in ref.system.phi]
    assert spec.p == ref.p and spec.iota == ref.iota


@pytest.mark.parametrize("name", DATA)
def test_print_parse_round_trip(name):
    a = pfile.load(pfile.data_path(name))
    b = pfile.parse(pfile.format_problem(a))
    assert pfile.format_problem(b) == pfile.format_problem(a)
    assert b.kind == a.kind and b.options == a.options


def test_generic_file_solves_toy():
    prob, init = pfile.load(pfile.data_path("cubic_1d_generic.prob")).to_problem()
    res = run(prob, init)
    assert res.status is RunStatus.CONVERGED
    assert res.logs[-1].objective == pytest.approx(-1.0, abs=1e-3)


def test_generic_objective_weights():
    text = """
[system]
nvars = 1
[variables]
v = free 0..2 : x1^2
[constraints]
c = sos : @v
[objective]
minimize = (1 + x1^2)*@v
"""
    prob, init = pfile.parse(text).to_problem()
    assert list(prob.cost) == [1.0, 0.0, 1.0]
    assert prob.split(init.xi)["v"] == P("x1^2", 1)


def test_constraint_terms():
    pf = pfile.parse("[system]\nnvars = 2\n[variables]\nv = free 2\n[constraints]\nc = zero : x1*d2(@v) - @v\n"
                     "[objective]\nminimize = @v\n")
    (c,) = pf.constraints
    assert c.kind == "zero"
    keys = {fs for _, fs in c.terms}
    assert keys == {(Factor("v", 1),), (Factor("v"),)}


def _err(text):
    with pytest.raises(ParseError) as e:
        pfile.parse(text)
    return str(e.value)


def test_empty_file():
    assert "missing [system]" in _err("")


def test_missing_nvars():
    assert "missing key 'nvars'" in _err("[system]\ndx1 = -x1\n")


def test_missing_dynamics():
    assert "dx2" in _err("[system]\nnvars = 2\ndx1 = -x1\n")


def test_unknown_key_has_line():
    msg = _err("[system]\nnvars = 1\ndx1 = -x1\n[options]\nspeed = 3\n")
    assert "line 5" in msg and "speed" in msg


def test_unknown_section():
    assert "line 1" in _err("[stuff]\n")


def test_duplicate_key():
    assert "line 3" in _err("[system]\nnvars = 1\nnvars = 1\ndx1 = -x1\n")


def test_bad_polynomial_column():
    msg = _err("[system]\nnvars = 1\ndx1 = -x1 + * 2\n")
    assert "line 3, column" in msg
    col = int(msg.split("column ")[1].split(":")[0])
    assert "dx1 = -x1 + * 2"[col - 1] == "*"


def test_sos_variable_must_have_even_degrees():
    assert "line 4" in _err("[system]\nnvars = 1\n[variables]\ns = sos 3\n")


def test_nonlinear_objective_rejected():
    text = "[system]\nnvars = 1\n[variables]\nv = free 2\n[objective]\nminimize = @v*@v\n"
    assert "line 6" in _err(text)


def test_roa_option_rejected_in_generic_file():
    text = "[system]\nnvars = 1\n[variables]\nv = free 2\n[objective]\nminimize = @v\n[options]\ndeg_v = 4\n"
    assert "line 8" in _err(text)


def test_generic_file_has_no_spec():
    pf = pfile.load(pfile.data_path("cubic_1d_generic.prob"))
    with pytest.raises(ValueError):
        pf.to_spec()
