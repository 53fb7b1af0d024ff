from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pphom.expr import EvalError, ParseError, is_y_periodic, parse_expr


def test_constant():
    e = parse_expr("1")
    assert e.evaluate() == 1.0
    assert e.is_constant()


def test_sin_value():
    e = parse_expr("2 + sin(2*pi*y1)")
    assert abs(e.evaluate(y1=0.25) - 3.0) < 1e-15
    assert e.variables() == {"y1"}


def test_syntax_error_position():
    with pytest.raises(ParseError) as info:
        parse_expr("x1/")
    assert info.value.pos == 3


def test_unknown_identifier():
    with pytest.raises(ParseError):
        parse_expr("x3 + 1")


def test_precedence_and_power():
    assert parse_expr("2 + 3*4^2").evaluate() == 50.0
    assert parse_expr("-2^2").evaluate() == -4.0
    assert parse_expr("2^3^2").evaluate() == 512.0
    assert parse_expr("(1 - 2) - 3").evaluate() == -4.0


def test_division_by_zero():
    with pytest.raises(EvalError):
        parse_expr("1/x1").evaluate(x1=0.0)


def test_vectorized():
    e = parse_expr("x1*x2 + exp(t)")
    x = np.linspace(0, 1, 5)
    assert np.allclose(e.evaluate(0.5, x, 2.0), 2 * x + math.exp(0.5))


def test_y_wrapping():
    e = parse_expr("y1")
    assert abs(e.evaluate(y1=1.25) - 0.25) < 1e-15
    assert is_y_periodic(parse_expr("cos(2*pi*y1)*sin(4*pi*y2)"))


LEAVES = st.sampled_from(["x1", "x2", "t", "y1", "2", "0.5", "pi"])


def _exprs():
    return st.recursive(
        LEAVES,
        lambda s: st.one_of(
            st.tuples(s, st.sampled_from(["+", "-", "*"]), s).map(lambda a: f"({a[0]} {a[1]} {a[2]})"),
            s.map(lambda a: f"sin({a})"),
            s.map(lambda a: f"-{a}"),
        ),
        max_leaves=6,
    )


@settings(max_examples=60, deadline=None)
@given(_exprs())
def test_roundtrip_print_parse(text):
    e = parse_expr(text)
    again = parse_expr(e.to_text())
    assert again.to_text() == e.to_text()
    v = (0.3, 0.1, 0.7, 0.2, 0.9)
    assert again.evaluate(*v) == pytest.approx(e.evaluate(*v), rel=1e-12, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 4), j=st.integers(0, 3), shift=st.floats(-3, 3))
def test_trig_periodicity(k, j, shift):
    e = parse_expr(f"sin(2*pi*{k}*y1) + cos(2*pi*{j}*y2)")
    assert abs(e.evaluate(y1=0.3 + shift, y2=0.6) - e.evaluate(y1=1.3 + shift, y2=1.6)) < 1e-12
