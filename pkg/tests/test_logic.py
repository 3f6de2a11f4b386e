from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multiplexnet.logic import (
    FALSE, TRUE, And, Atom, Cmp, LinExpr, MissingVariable, Not, Or, ParseError,
    UnknownIdentifier, evaluate, evaluate_many, free_vars, make_vars, parse, to_text,
)
from multiplexnet.randgen import random_assignment, random_formula

X, Y, Z = make_vars(["x", "y", "z"])
XYZ = ["x", "y", "z"]


def lin(coeffs, const=0):
    return LinExpr.build({k: Fraction(v) for k, v in coeffs.items()}, Fraction(const))


def test_parse_conjunction_of_disjunction():
    f = parse("(x + y >= z) & (z > 5 | z < 3)", XYZ)
    assert f == And((
        Atom(lin({X: 1, Y: 1, Z: -1}), Cmp.GE),
        Or((Atom(lin({Z: 1}, -5), Cmp.GT), Atom(lin({Z: 1}, -3), Cmp.LT))),
    ))


def test_parse_decimal_is_exact():
    f = parse("x > 3.5 & y > 0", XYZ)
    assert isinstance(f, And) and len(f.args) == 2
    assert f.args[0].lhs.constant == Fraction(-7, 2)


def test_parse_equality_and_coefficients():
    assert parse("x = 5", XYZ) == Atom(lin({X: 1}, -5), Cmp.EQ)
    f = parse("0.25*x - 2*y + x <= 1.5", XYZ)
    assert f == Atom(lin({X: Fraction(5, 4), Y: -2}, Fraction(-3, 2)), Cmp.LE)


def test_constant_atoms_fold():
    assert parse("3 > 2", XYZ) is TRUE
    assert parse("2 >= 3", XYZ) is FALSE
    assert parse("x - x > 0", XYZ) is FALSE


def test_syntax_error_has_position():
    with pytest.raises(ParseError) as err:
        parse("x >\n  & y > 0", XYZ)
    assert err.value.line == 2
    assert err.value.column == 3


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifier):
        parse("w > 0", XYZ)


@pytest.mark.parametrize("text", ["x >", "x > 0 &", "(x > 0", "x > 0)", "x y > 0",
                                  "x * y > 0", "> 0", "x >> 0", ""])
def test_rejects_malformed(text):
    with pytest.raises(ParseError):
        parse(text, XYZ)


def test_eval_examples():
    f = parse("x > 3.5 & y > 0", XYZ)
    assert evaluate(f, {"x": 5, "y": 2})
    assert not evaluate(parse("x >= 2 | x <= -2", XYZ), {"x": 0})
    for c in (Fraction(0), Fraction(-7, 3), Fraction(10 ** 20, 7)):
        assert evaluate(Atom(lin({X: 1}, -c), Cmp.EQ), {X: c})


def test_eval_boundaries_closed_and_strict():
    assert evaluate(parse("x >= 2", XYZ), {"x": 2})
    assert not evaluate(parse("x > 2", XYZ), {"x": 2})
    assert evaluate(parse("x <= 2", XYZ), {"x": 2})
    assert not evaluate(parse("x < 2", XYZ), {"x": 2})


def test_eval_missing_variable():
    with pytest.raises(MissingVariable):
        evaluate(parse("x + y > 0", XYZ), {"x": 1})


def test_free_vars():
    assert free_vars(parse("x > 3.5 & y > 0", XYZ)) == {X, Y}
    assert free_vars(TRUE) == frozenset()
    assert free_vars(parse("x + y >= z", XYZ)) == {X, Y, Z}


def test_round_trip_random():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        f, vs = random_formula(rng)
        text = to_text(f)
        assert parse(text, [v.name for v in vs]) == f, text


def test_round_trip_constants():
    for f in (TRUE, FALSE, And((TRUE, Atom(lin({X: 1}), Cmp.GT)))):
        assert parse(to_text(f), XYZ) == f


def test_de_morgan_at_eval_level():
    rng = np.random.default_rng(5)
    for _ in range(300):
        a, vs = random_formula(rng, n_vars=3, max_atoms=3, allow_eq=False)
        b, _ = random_formula(rng, n_vars=3, max_atoms=3, allow_eq=False)
        lhs = Not(And((a, b)))
        rhs = Or((Not(a), Not(b)))
        for _ in range(10):
            asg = random_assignment(rng, vs)
            assert evaluate(lhs, asg) == evaluate(rhs, asg)


@settings(max_examples=200, deadline=None)
@given(st.fractions(min_value=-100, max_value=100, max_denominator=50),
       st.fractions(min_value=-100, max_value=100, max_denominator=50),
       st.sampled_from(list(Cmp)))
def test_eval_matches_direct_rational_comparison(c, v, cmp):
    a = Atom(lin({X: 1}, -c), cmp)
    direct = {Cmp.GT: v > c, Cmp.GE: v >= c, Cmp.LT: v < c, Cmp.LE: v <= c,
              Cmp.EQ: v == c}[cmp]
    assert evaluate(a, {X: v}) == direct


def test_evaluate_many_matches_exact():
    rng = np.random.default_rng(3)
    for _ in range(300):
        f, vs = random_formula(rng)
        pts = [random_assignment(rng, vs) for _ in range(20)]
        # nudge half the points by one ulp so near-boundary rows are exercised
        arr = np.array([[float(p[v]) for v in vs] for p in pts])
        arr[::2] = np.nextafter(arr[::2], np.inf)
        got = evaluate_many(f, vs, arr)
        want = [evaluate(f, {v: Fraction(float(x)) for v, x in zip(vs, row)}) for row in arr]
        assert list(got) == want


def test_evaluate_many_near_boundary():
    f = parse("x + y > 0.3", ["x", "y"])
    x = 0.1
    y = 0.2  # 0.1 + 0.2 rounds up in floats, but the exact sum is below 0.3
    exact = Fraction(x) + Fraction(y) > Fraction(3, 10)
    assert bool(evaluate_many(f, ["x", "y"], np.array([[x, y]]))[0]) == exact
