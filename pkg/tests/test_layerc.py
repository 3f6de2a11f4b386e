import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from multiplexnet import grad as G
from multiplexnet.dnf import to_dnf
from multiplexnet.layerc import (
    CyclicDependency, DependentEquality, GroupMargin, Interval, LowerBound,
    NoFeasibleTerm, NonFiniteInput, Passthrough, SetConst, UpperBound, apply,
    compile_formula, compile_group_margin, compile_term, describe, softplus,
    softplus_offset,
)
from multiplexnet.logic import evaluate, make_vars, parse
from multiplexnet.randgen import random_formula

mpmath.mp.dps = 50


def g_exact(v):
    return mpmath.log(1 + mpmath.exp(v))


def head(text, names):
    order = make_vars(names)
    return compile_formula(parse(text, order), order)


def test_softplus_and_offset():
    assert softplus(0.0) == pytest.approx(math.log(2), abs=1e-16)
    assert softplus(800.0) == 800.0
    assert softplus(-800.0) >= 0.0
    assert softplus_offset(0, 1) == pytest.approx(float(mpmath.log(mpmath.e - 1)), rel=1e-15)
    assert softplus_offset(0, 60) == pytest.approx(60.0, rel=1e-15)
    assert softplus(softplus_offset(2.0, 2.5)) == pytest.approx(0.5, rel=1e-14)
    with pytest.raises(ValueError):
        softplus_offset(1.0, 1.0)


def test_two_sided_disjunction():
    h = head("x >= 2 | x <= -2", ["x"])
    assert h.k == 2
    raw = np.linspace(-5, 5, 11)[:, None]
    outs = {p.steps[0].__class__: apply(p, raw)[:, 0] for p in h.programs}
    lo, up = outs[LowerBound], outs[UpperBound]
    np.testing.assert_allclose(lo, np.logaddexp(0, raw[:, 0]) + 2, rtol=1e-15)
    np.testing.assert_allclose(up, -np.logaddexp(0, -raw[:, 0]) - 2, rtol=1e-15)


def test_dependent_upper_interval_example():
    order = make_vars(["y", "x"])
    term = to_dnf(parse("x > y + 2 & x < 5", order)).terms[0]
    p = compile_term(term, order)
    assert isinstance(p.steps[1], Interval)
    assert p.dependencies[1] == {0}
    rng = np.random.default_rng(0)
    raw = rng.uniform(-6, 6, size=(200, 2))
    out = apply(p, raw)
    for (ry, rx), (y, x) in zip(raw, out):
        beta = mpmath.mpf(5)
        alpha = mpmath.log(mpmath.exp(beta - (mpmath.mpf(y) + 2)) - 1)
        expected = beta - g_exact(alpha - g_exact(rx))
        assert abs(x - float(expected)) <= 1e-9 * max(1.0, abs(float(expected)))
        assert evaluate(term.as_formula(), {order[0]: Fraction(y), order[1]: Fraction(x)})


def test_equality_sets_constant():
    p = head("x = 3", ["x"]).programs[0]
    assert p.steps == (SetConst(Fraction(3)),)
    assert np.all(apply(p, np.array([[-1e6], [0.0], [42.0]])) == 3.0)


def test_interval_value_at_zero():
    p = head("x > 0 & x < 1", ["x"]).programs[0]
    got = apply(p, np.array([0.0]))[0]
    expected = 1 - g_exact(mpmath.log(mpmath.e - 1) - mpmath.log(2))
    assert got == pytest.approx(float(expected), abs=1e-15)
    assert got == pytest.approx(0.379, abs=1e-3)
    assert 0 < got < 1


def test_lower_bound_strict():
    p = head("x > 2", ["x"]).programs[0]
    raw = np.array([-1e3, -50, -30, 0, 30, 1e3])[:, None]
    out = apply(p, raw)[:, 0]
    assert np.all(out > 2)


def test_infeasible_term_dropped():
    h = head("(x > 5 & x < 3) | x > 0", ["x"])
    assert h.k == 1 and h.dropped == 1
    with pytest.raises(NoFeasibleTerm):
        head("x > 5 & x < 3", ["x"])


def test_crossing_dependent_bounds_projected():
    # x needs y < x < 2y, which forces y > 0 on the earlier variable
    h = head("x > y & x < 2*y", ["y", "x"])
    p = h.programs[0]
    assert isinstance(p.steps[0], LowerBound)
    out = apply(p, np.random.default_rng(1).uniform(-50, 50, size=(500, 2)))
    y, x = out[:, 0], out[:, 1]
    assert np.all(y > 0) and np.all(x > y) and np.all(x < 2 * y)


def test_unsupported_terms():
    with pytest.raises(DependentEquality):
        head("x + y = 1", ["x", "y"])
    # 3x = 1 has no float solution, so the only term is dropped
    with pytest.raises(NoFeasibleTerm):
        head("3*x = 1", ["x"])
    with pytest.raises(CyclicDependency):
        order = make_vars(["x"])
        compile_formula(parse("x + y > 0", ["x", "y"]), order)


def test_non_finite_input():
    p = head("x > 0", ["x"]).programs[0]
    with pytest.raises(NonFiniteInput):
        apply(p, np.array([np.nan]))


def test_monotone_scalar_transforms():
    grid = np.linspace(-20, 20, 1001)[:, None]
    for text in ("x > -1.5", "x < 4", "x > -2 & x < 7"):
        out = apply(head(text, ["x"]).programs[0], grid)[:, 0]
        assert np.all(np.diff(out) > 0), text


def test_apply_on_tape_and_gradients():
    rng = np.random.default_rng(2)
    cases = ["x > 1 & y < x", "x < 3 & y > x - 1 & y < x + 2", "x > -1 & x < 1 & y > 2*x",
             "x = 2 & y > x", "y < 0"]
    for text in cases:
        p = head(text, ["x", "y"]).programs[0]
        for _ in range(5):
            point = rng.uniform(-3, 3, size=2)
            rep = G.finite_diff_check(lambda r: G.sum(G.square(apply(p, r))), point)
            assert rep.passed, (text, rep)


def test_lemma_property_sample():
    rng = np.random.default_rng(17)
    checked = 0
    while checked < 200:
        f, vs = random_formula(rng)
        try:
            h = compile_formula(f, vs)
        except NoFeasibleTerm:
            continue
        checked += 1
        raw = rng.uniform(-50, 50, size=(50, len(vs)))
        for p in h.programs:
            out = apply(p, raw)
            for row in out:
                asg = {v: Fraction(float(x)) for v, x in zip(vs, row)}
                assert evaluate(p.term.as_formula(), asg)


def test_group_margin_two_singletons():
    progs = compile_group_margin([[0], [1]], 0.5)
    rng = np.random.default_rng(0)
    for p in progs:
        assert isinstance(next(s for s in p.steps if not isinstance(s, Passthrough)), GroupMargin)
        raw = rng.normal(scale=5, size=(1000, 2))
        out = apply(p, raw)
        j = next(i for i, s in enumerate(p.steps) if isinstance(s, GroupMargin))
        assert np.all(out[:, j] > out[:, 1 - j])


def test_group_margin_mass():
    groups = [[0, 1, 2], [3, 4, 5], [6, 7, 8]]
    alpha = 0.95
    progs = compile_group_margin(groups, alpha)
    raw = np.random.default_rng(3).normal(scale=10, size=(10_000, 9))
    for g, p in zip(groups, progs):
        out = apply(p, raw)
        others = [j for j in range(9) if j not in g]
        np.testing.assert_array_equal(out[:, others], raw[:, others])
        z = out - out.max(axis=1, keepdims=True)
        prob = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        assert np.all(prob[:, g].sum(axis=1) > alpha)
        # each in-group logit clears the margin over the out-group logsumexp
        lse = np.logaddexp.reduce(raw[:, others], axis=1)
        assert np.all(out[:, g].min(axis=1) - lse > math.log(alpha / (1 - alpha)))


def test_group_margin_validation():
    with pytest.raises(ValueError):
        compile_group_margin([[0], []], 0.9)
    with pytest.raises(ValueError):
        compile_group_margin([[0, 1], [1, 2]], 0.9)
    with pytest.raises(ValueError):
        compile_group_margin([[0], [1]], 1.0)


def test_describe_mentions_dependencies():
    text = describe(head("x > y + 2 & x < 5", ["y", "x"]).programs[0])
    assert "interval" in text and "<- y" in text
