"""Random formulas and assignments for property checks."""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from .logic import And, Atom, Cmp, Formula, LinExpr, Not, Or, VarId, atom, make_vars

_INEQ = (Cmp.GT, Cmp.GE, Cmp.LT, Cmp.LE)


def random_atom(rng: np.random.Generator, variables: list[VarId],
                allow_eq: bool = True, max_vars: int = 3) -> Formula:
    while True:
        k = int(rng.integers(1, min(max_vars, len(variables)) + 1))
        chosen = rng.choice(len(variables), size=k, replace=False)
        if allow_eq and k == 1 and rng.random() < 0.1:
            cmp = Cmp.EQ
        else:
            cmp = _INEQ[int(rng.integers(4))]
        coeffs = {}
        for i in chosen:
            if cmp is Cmp.EQ:
                # keeps the solved value a binary fraction, which floats can hold
                c = Fraction(int(rng.choice([1, 2])))
            else:
                c = Fraction(int(rng.integers(1, 4)), int(rng.choice([1, 2])))
            coeffs[variables[int(i)]] = c if rng.random() < 0.5 else -c
        const = Fraction(int(rng.integers(-10, 11)), 2)
        f = atom(LinExpr.build(coeffs, const), cmp)
        if isinstance(f, Atom):
            return f


def random_formula(rng: np.random.Generator, n_vars: int | None = None,
                   max_atoms: int = 6, allow_eq: bool = True
                   ) -> tuple[Formula, list[VarId]]:
    """A random tree over at most ``max_atoms`` atoms and 3 variables.

    Equalities only appear under an even number of negations, so the result
    always has a negation normal form.
    """
    if n_vars is None:
        n_vars = int(rng.integers(1, 4))
    variables = make_vars([f"x{i}" for i in range(n_vars)])
    n_atoms = int(rng.integers(1, max_atoms + 1))

    def build(n: int, positive: bool) -> Formula:
        if n == 1:
            f = random_atom(rng, variables, allow_eq=allow_eq and positive)
            if rng.random() < 0.2 and f.cmp is not Cmp.EQ:
                return Not(f)
            return f
        if rng.random() < 0.15:
            return Not(build(n, not positive))
        split = int(rng.integers(1, n))
        parts = (build(split, positive), build(n - split, positive))
        return And(parts) if rng.random() < 0.5 else Or(parts)

    return build(n_atoms, True), variables


def random_assignment(rng: np.random.Generator, variables: list[VarId],
                      spread: int = 6) -> dict[VarId, Fraction]:
    """Rationals with small denominators, so atom boundaries get hit."""
    out = {}
    for v in variables:
        den = int(rng.integers(1, 5))
        out[v] = Fraction(int(rng.integers(-spread * den, spread * den + 1)), den)
    return out
