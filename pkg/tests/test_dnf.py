from fractions import Fraction
from itertools import product

import numpy as np
import pytest

from multiplexnet.dnf import (
    INFEASIBLE, DisequalityError, DnfTerm, TermBudgetExceeded, simplify_term,
    to_dnf, to_nnf,
)
from multiplexnet.logic import And, Atom, Cmp, Not, Or, evaluate, make_vars, parse
from multiplexnet.randgen import random_assignment, random_formula

XY = ["x", "y"]


def has_not(f):
    if isinstance(f, Not):
        return True
    if isinstance(f, (And, Or)):
        return any(has_not(a) for a in f.args)
    return False


def test_nnf_flips_comparators():
    assert to_nnf(parse("!(x >= 2)", XY)) == parse("x < 2", XY)
    assert to_nnf(parse("!(x > 2)", XY)) == parse("x <= 2", XY)
    assert to_nnf(parse("!(x <= 2)", XY)) == parse("x > 2", XY)
    assert to_nnf(parse("!!(x < 2)", XY)) == parse("x < 2", XY)


def test_nnf_de_morgan():
    f = to_nnf(parse("!(x > 1 & y < 2)", XY))
    assert f == parse("x <= 1 | y >= 2", XY)


def test_disequality_rejected():
    with pytest.raises(DisequalityError):
        to_nnf(parse("!(x = 5)", XY))


def test_distributivity():
    d = to_dnf(parse("(x > 0 | y > 0) & x < 5", XY))
    assert len(d) == 2
    assert {t.as_formula() for t in d.terms} == {
        DnfTerm.of([a, b]).as_formula() for a, b in
        [(parse("x > 0", XY), parse("x < 5", XY)), (parse("y > 0", XY), parse("x < 5", XY))]
    }


def test_single_conjunction_one_term():
    assert len(to_dnf(parse("x > 0 & y > 0 & x + y < 3", XY))) == 1


def test_four_sign_patterns():
    f = parse("(p < 0.01 | p > 0.99) & (q < 0.01 | q > 0.99)", ["p", "q"])
    d = to_dnf(f)
    assert len(d) == 4
    # truth table over the atom sign patterns: one point per region plus boundaries
    vals = [Fraction(0), Fraction(1, 100), Fraction(1, 2), Fraction(99, 100), Fraction(1)]
    p, q = make_vars(["p", "q"])
    for a, b in product(vals, vals):
        asg = {p: a, q: b}
        assert evaluate(f, asg) == d.evaluate(asg)


def test_term_cap():
    clauses = " & ".join(f"(x > {i} | y > {i})" for i in range(13))
    with pytest.raises(TermBudgetExceeded):
        to_dnf(parse(clauses, XY), cap=4096)
    assert len(to_dnf(parse(clauses, XY), cap=10_000)) <= 2 ** 13


def test_terms_sorted_and_deduplicated():
    d = to_dnf(parse("(x > 0 & y > 0) | (y > 0 & x > 0) | x < -1", XY))
    assert len(d) == 2
    assert list(d.terms) == sorted(d.terms, key=lambda t: [a.signature() for a in t.atoms])


def test_simplify_examples():
    x, = make_vars(["x"])
    t = DnfTerm.of([parse("x > 1", ["x"]), parse("x > 3", ["x"])])
    assert simplify_term(t) == DnfTerm.of([parse("x > 3", ["x"])])
    assert simplify_term(DnfTerm.of([parse("x > 5", ["x"]), parse("x < 3", ["x"])])) is INFEASIBLE
    s = simplify_term(DnfTerm.of([parse("x = 2", ["x"]), parse("x > 0", ["x"])]))
    assert s == DnfTerm.of([parse("x = 2", ["x"])])
    assert evaluate(parse("x > 0", ["x"]), {x: Fraction(2)})


def test_simplify_edge_cases():
    one = ["x"]
    assert simplify_term(DnfTerm.of([parse("x >= 2", one), parse("x < 2", one)])) is INFEASIBLE
    assert simplify_term(DnfTerm.of([parse("x >= 2", one), parse("x <= 2", one)])) == \
        DnfTerm.of([parse("x = 2", one)])
    assert simplify_term(DnfTerm.of([parse("x = 2", one), parse("x = 3", one)])) is INFEASIBLE
    assert simplify_term(DnfTerm.of([parse("x = 2", one), parse("x > 2", one)])) is INFEASIBLE
    # strictness wins a tie between equal bounds
    assert simplify_term(DnfTerm.of([parse("x >= 2", one), parse("x > 2", one)])) == \
        DnfTerm.of([parse("x > 2", one)])


def test_equivalence_random():
    rng = np.random.default_rng(21)
    for _ in range(200):
        f, vs = random_formula(rng)
        d = to_dnf(f)
        for _ in range(50):
            asg = random_assignment(rng, vs)
            assert evaluate(f, asg) == d.evaluate(asg)


def test_infeasible_terms_never_satisfied():
    rng = np.random.default_rng(8)
    found = 0
    while found < 30:
        f, vs = random_formula(rng, n_vars=1, max_atoms=4)
        for t in to_dnf(f).terms:
            if simplify_term(t) is INFEASIBLE:
                found += 1
                for _ in range(400):
                    assert not t.holds(random_assignment(rng, vs))


def test_idempotent():
    rng = np.random.default_rng(4)
    for _ in range(200):
        f, _ = random_formula(rng)
        d = to_dnf(f)
        assert set(to_dnf(d.as_formula()).terms) == set(d.terms)
