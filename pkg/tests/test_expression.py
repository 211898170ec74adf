import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrgbsde.errors import ParseError
from mrgbsde.expression import ExpressionError, parse_components, parse_expression, variables_for


def test_variables_for():
    assert variables_for(2) == ("t", "x", "z", "y1", "y2")


@pytest.mark.parametrize("text, env, expected", [
    ("1 + 2*3", {}, 7.0),
    ("2^3^2", {}, 512.0),
    ("-x^2", {"x": 3.0}, -9.0),
    ("pos(x - 1) + sq(z)", {"x": 0.5, "z": 2.0}, 4.0),
    ("min(x, 2) * max(t, 0.5)", {"x": 3.0, "t": 0.1}, 1.0),
    ("exp(0) + abs(-2.5)", {}, 3.5),
    ("y1 / 4", {"y1": 1.0}, 0.25),
    ("1e-3 * 2", {}, 0.002),
])
def test_evaluation(text, env, expected):
    assert float(parse_expression(text)(**env)) == pytest.approx(expected, rel=1e-15)


def test_vectorised_over_nodes():
    x = np.linspace(-2, 2, 9)
    expr = parse_expression("pos(1 - x^2) + t")
    np.testing.assert_allclose(expr(x=x, t=0.5), np.maximum(1 - x**2, 0) + 0.5)
    assert expr.depends_on("x") and not expr.depends_on("z")


@pytest.mark.parametrize("text, location", [
    ("x +* 2", 4),
    ("foo(x)", 1),
    ("x + w", 5),
    ("exp(x, 1)", 1),
    ("x if x else 1", 1),
    ("x == 1", 1),
    ("'a'", 1),
    ("x ^ q", 5),
])
def test_parse_errors_carry_location(text, location):
    with pytest.raises(ParseError) as info:
        parse_expression(text, ("x", "t"))
    assert info.value.location == location
    assert info.value.expression == text


def test_empty_and_tuple_rejected():
    with pytest.raises(ParseError):
        parse_expression("   ")
    with pytest.raises(ParseError):
        parse_expression("(1, 2)")
    with pytest.raises(ParseError):
        parse_expression(3.0)


def test_runtime_errors():
    with pytest.raises(ExpressionError, match="division by zero") as info:
        parse_expression("1 / (x - 1)", ("x",))(x=np.array([0.0, 1.0]))
    assert info.value.location == 6  # the "x - 1" inside the parentheses
    with pytest.raises(ExpressionError, match="non-finite"):
        parse_expression("exp(x)", ("x",))(x=1000.0)
    with pytest.raises(ExpressionError, match="unbound"):
        parse_expression("x + t")(x=1.0)
    assert isinstance(ExpressionError("e", 0, "m"), ParseError)


def test_components():
    comps = parse_components("(1 - x^2, pos(x), 0.5)")
    assert [c.source for c in comps] == ["1 - x^2", "pos(x)", "0.5"]
    assert float(comps[0](x=2.0)) == -3.0
    single = parse_components("x^2")
    assert len(single) == 1 and float(single[0](x=3.0)) == 9.0
    with pytest.raises(ParseError):
        parse_components("(x, w)")


# Random arithmetic trees compared with plain float evaluation.
_leaf = st.one_of(st.sampled_from(["x", "t"]),
                  st.floats(0.1, 5).map(lambda v: repr(round(v, 3))))


def _combine(children):
    ops = st.sampled_from(["+", "-", "*"])
    binary = st.tuples(children, ops, children).map(lambda p: f"({p[0]} {p[1]} {p[2]})")
    funcs = st.tuples(st.sampled_from(["abs", "pos", "sq"]), children).map(lambda p: f"{p[0]}({p[1]})")
    pair = st.tuples(st.sampled_from(["min", "max"]), children, children).map(
        lambda p: f"{p[0]}({p[1]}, {p[2]})")
    return st.one_of(binary, funcs, pair, children.map(lambda c: f"-{c}"))


TREES = st.recursive(_leaf, _combine, max_leaves=12)
PY = {"abs": abs, "pos": lambda a: max(a, 0.0), "sq": lambda a: a * a, "min": min, "max": max}


@settings(max_examples=300, deadline=None)
@given(TREES, st.floats(-3, 3), st.floats(0, 1))
def test_matches_python_arithmetic(text, x, t):
    ref = eval(text, {"__builtins__": {}}, dict(PY, x=x, t=t))
    if not math.isfinite(ref):
        return
    got = float(parse_expression(text, ("x", "t"))(x=x, t=t))
    assert got == pytest.approx(ref, rel=1e-12, abs=1e-12)
