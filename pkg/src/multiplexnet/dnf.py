"""Negation normal form, distribution into DNF, and per-term bound merging."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from .logic import (
    FALSE, TRUE, And, Atom, Cmp, Formula, LinExpr, LogicError, Not, Or,
    VarId, _Const, _eval, _normalize_assignment, atom, free_vars,
)

__all__ = [
    "DnfTerm", "DnfFormula", "Infeasible", "INFEASIBLE", "DisequalityError",
    "TermBudgetExceeded", "to_nnf", "to_dnf", "simplify_term",
    "DEFAULT_TERM_CAP",
]

DEFAULT_TERM_CAP = 4096


class DisequalityError(LogicError):
    """Raised for a negated equality, which has no single-term encoding."""


class TermBudgetExceeded(LogicError):
    pass


def _negate_atom(a: Atom) -> Atom:
    if a.cmp is Cmp.EQ:
        raise DisequalityError(f"disequality unsupported: !({a.lhs} = 0)")
    return Atom(a.lhs, a.cmp.negated)


def to_nnf(f: Formula, negate: bool = False) -> Formula:
    """Push negations into the atoms by flipping comparators."""
    if isinstance(f, Atom):
        return _negate_atom(f) if negate else f
    if isinstance(f, Not):
        return to_nnf(f.arg, not negate)
    if isinstance(f, _Const):
        return (FALSE if f.value else TRUE) if negate else f
    if isinstance(f, (And, Or)):
        args = tuple(to_nnf(g, negate) for g in f.args)
        flip = isinstance(f, And) == negate
        return Or(args) if flip else And(args)
    raise TypeError(f"not a formula: {f!r}")


@dataclass(frozen=True)
class DnfTerm:
    """Conjunction of atoms; the empty term is TRUE."""

    atoms: tuple[Atom, ...] = ()

    @classmethod
    def of(cls, atoms) -> "DnfTerm":
        unique = {a.signature(): a for a in atoms}
        return cls(tuple(unique[k] for k in sorted(unique)))

    def signature(self):
        return tuple(a.signature() for a in self.atoms)

    def as_formula(self) -> Formula:
        if not self.atoms:
            return TRUE
        if len(self.atoms) == 1:
            return self.atoms[0]
        return And(self.atoms)

    def variables(self) -> frozenset[VarId]:
        return frozenset(v for a in self.atoms for v in a.variables)

    def holds(self, assignment: Mapping[VarId, Fraction]) -> bool:
        return all(a.cmp.holds(a.lhs.sign(assignment)) for a in self.atoms)


@dataclass(frozen=True)
class DnfFormula:
    """Disjunction of terms. An empty term list denotes FALSE."""

    terms: tuple[DnfTerm, ...]

    def as_formula(self) -> Formula:
        if not self.terms:
            return FALSE
        if len(self.terms) == 1:
            return self.terms[0].as_formula()
        return Or(tuple(t.as_formula() for t in self.terms))

    def evaluate(self, assignment: Mapping) -> bool:
        return _eval(self.as_formula(),
                     _normalize_assignment(self.as_formula(), assignment))

    def __len__(self):
        return len(self.terms)


def _dnf_terms(f: Formula, cap: int) -> list[tuple[Atom, ...]]:
    if isinstance(f, Atom):
        return [(f,)]
    if f is TRUE:
        return [()]
    if f is FALSE:
        return []
    if isinstance(f, Or):
        out = []
        for g in f.args:
            out.extend(_dnf_terms(g, cap))
            if len(out) > cap:
                raise TermBudgetExceeded(f"DNF exceeds {cap} terms")
        return out
    if isinstance(f, And):
        acc = [()]
        for g in f.args:
            sub = _dnf_terms(g, cap)
            if len(acc) * len(sub) > cap:
                raise TermBudgetExceeded(
                    f"DNF would need {len(acc) * len(sub)} terms (cap {cap})")
            acc = [t + s for t in acc for s in sub]
        return acc
    raise TypeError(f"formula not in NNF: {f!r}")


def to_dnf(f: Formula, cap: int = DEFAULT_TERM_CAP) -> DnfFormula:
    """Distribute conjunction over disjunction.

    Atoms inside a term and the terms themselves are deduplicated and sorted
    by signature, so the result is reproducible.

    Raises DisequalityError for a negated equality and TermBudgetExceeded
    when more than ``cap`` terms would be produced.
    """
    raw = _dnf_terms(to_nnf(f), cap)
    terms = {}
    for atoms in raw:
        t = DnfTerm.of(atoms)
        terms.setdefault(t.signature(), t)
    return DnfFormula(tuple(terms[k] for k in sorted(terms)))


class Infeasible:
    __slots__ = ()

    def __repr__(self):
        return "INFEASIBLE"

    def __bool__(self):
        return False


INFEASIBLE = Infeasible()


def _bound_atom(var: VarId, value: Fraction, cmp: Cmp) -> Atom:
    return Atom(LinExpr.build({var: Fraction(1)}, -value), cmp)


def simplify_term(t: DnfTerm) -> DnfTerm | Infeasible:
    """Merge the constant bounds of each single-variable atom.

    Lower bounds keep the largest value and upper bounds the smallest (strict
    wins ties). An equality absorbs the bounds it satisfies. Atoms over more
    than one variable pass through untouched.
    """
    lower: dict[VarId, tuple[Fraction, bool]] = {}
    upper: dict[VarId, tuple[Fraction, bool]] = {}
    equal: dict[VarId, Fraction] = {}
    rest = []
    for a in t.atoms:
        if len(a.lhs.coeffs) != 1:
            rest.append(a)
            continue
        (var, c), = a.lhs.coeffs
        value = -a.lhs.constant / c
        cmp = a.cmp if c > 0 else a.cmp.flipped
        if cmp is Cmp.EQ:
            if var in equal and equal[var] != value:
                return INFEASIBLE
            equal[var] = value
        elif cmp in (Cmp.GT, Cmp.GE):
            cur = lower.get(var)
            cand = (value, cmp.strict)
            if cur is None or cand[0] > cur[0] or (cand[0] == cur[0] and cand[1]):
                lower[var] = cand
        else:
            cur = upper.get(var)
            cand = (value, cmp.strict)
            if cur is None or cand[0] < cur[0] or (cand[0] == cur[0] and cand[1]):
                upper[var] = cand

    out = list(rest)
    for var in set(lower) | set(upper) | set(equal):
        lo, hi = lower.get(var), upper.get(var)
        if var in equal:
            v = equal[var]
            if lo is not None and not (v > lo[0] or (v == lo[0] and not lo[1])):
                return INFEASIBLE
            if hi is not None and not (v < hi[0] or (v == hi[0] and not hi[1])):
                return INFEASIBLE
            out.append(_bound_atom(var, v, Cmp.EQ))
            continue
        if lo is not None and hi is not None:
            if lo[0] > hi[0] or (lo[0] == hi[0] and (lo[1] or hi[1])):
                return INFEASIBLE
            if lo[0] == hi[0]:
                out.append(_bound_atom(var, lo[0], Cmp.EQ))
                continue
        if lo is not None:
            out.append(_bound_atom(var, lo[0], Cmp.GT if lo[1] else Cmp.GE))
        if hi is not None:
            out.append(_bound_atom(var, hi[0], Cmp.LT if hi[1] else Cmp.LE))
    return DnfTerm.of(out)


def substitute_term(t: DnfTerm, var: VarId, value: Fraction) -> DnfTerm | Infeasible:
    """Replace ``var`` by a constant in every atom; folded atoms are checked."""
    out = []
    for a in t.atoms:
        f = atom(a.lhs.substitute(var, value), a.cmp)
        if f is FALSE:
            return INFEASIBLE
        if f is not TRUE:
            out.append(f)
    return DnfTerm.of(out)


def term_variables(d: DnfFormula) -> frozenset[VarId]:
    return free_vars(d.as_formula())
