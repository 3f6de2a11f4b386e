"""Compile DNF terms into differentiable output transforms.

Every feasible term becomes a :class:`TransformProgram` that maps any finite
raw vector to a point satisfying the term, using softplus ``g`` as the
positive primitive:

* lower bound ``x > a``          -> ``a + g(r)``
* upper bound ``x < b``          -> ``b - g(-r)``
* interval ``a < x < b``         -> ``b - g(k(a, b) - g(r))``, ``k(a, b) = log(exp(b - a) - 1)``
* equality ``x = c``             -> ``c``
* dependent bounds are affine in outputs computed earlier in ``var_order``.

Multi-variable atoms are solved for their pivot, the variable with the
highest position in ``var_order``. Before assigning bounds, the pivot is
eliminated Fourier-Motzkin style so that every earlier variable also
carries the constraints ``lower < upper`` needed for the later interval to be
non-empty.

The guarantee is exact, not approximate: dependent bounds are computed with a
rounding-error margin and results are clamped one ulp inside the bound, so
the float outputs satisfy the term under exact rational evaluation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

from . import grad as G
from .dnf import (
    INFEASIBLE, DnfTerm, simplify_term, substitute_term, to_dnf,
    DEFAULT_TERM_CAP,
)
from .logic import (
    FALSE, TRUE, Atom, Cmp, Formula, LinExpr, LogicError, VarId, atom,
    free_vars,
)

__all__ = [
    "Bound", "Passthrough", "SetConst", "LowerBound", "UpperBound", "Interval",
    "GroupMargin", "TransformProgram", "MultiplexHead", "CompileError",
    "InfeasibleTerm", "InexactConstant", "NoFeasibleTerm", "CyclicDependency",
    "DependentEquality", "NonFiniteInput", "softplus", "softplus_offset",
    "compile_term", "compile_formula", "compile_group_margin", "apply",
    "describe",
]

_U = 2.0 ** -53
_TINY = 1e-300
# relative distance kept from a bound by variables that later bounds read
GUARD = 1e-9


class CompileError(LogicError):
    pass


class InfeasibleTerm(CompileError):
    pass


class NoFeasibleTerm(CompileError):
    pass


class CyclicDependency(CompileError):
    pass


class InexactConstant(InfeasibleTerm):
    """The term pins a variable to a value no float can represent."""


class DependentEquality(CompileError):
    """An equality over several variables cannot be met exactly in floats."""


class NonFiniteInput(ValueError):
    pass


def softplus(v: float) -> float:
    """log(1 + exp(v)) without overflow."""
    if v > 0:
        return v + math.log1p(math.exp(-v))
    return math.log1p(math.exp(v))


def softplus_offset(a: float, b: float) -> float:
    """k(a, b) = log(exp(b - a) - 1), so that ``softplus(k) == b - a``."""
    u = b - a
    if not u > 0:
        raise ValueError(f"softplus_offset needs b > a, got a={a}, b={b}")
    if u > 30.0:
        return u + math.log1p(-math.exp(-u))
    return math.log(math.expm1(u))


def _round_up(q: Fraction) -> float:
    f = float(q)
    return f if Fraction(f) >= q else float(np.nextafter(f, np.inf))


def _round_down(q: Fraction) -> float:
    f = float(q)
    return f if Fraction(f) <= q else float(np.nextafter(f, -np.inf))


# --------------------------------------------------------------------------
# program representation

@dataclass(frozen=True)
class Bound:
    """Affine bound ``sum(c * x) + constant`` over earlier outputs."""

    expr: LinExpr
    strict: bool

    @property
    def constant_only(self) -> bool:
        return not self.expr.coeffs

    @cached_property
    def _lowered(self):
        idx = [v.index for v, _ in self.expr.coeffs]
        coef = [float(c) for _, c in self.expr.coeffs]
        return idx, coef, float(self.expr.constant)

    def evaluate(self, columns: dict[int, G.Value], lower: bool) -> G.Value:
        """Runtime value, rounded so that it never undercuts (lower) or
        overshoots (upper) the exact bound."""
        if self.constant_only:
            q = self.expr.constant
            return G.constant(_round_up(q) if lower else _round_down(q))
        idx, coef, const = self._lowered
        acc = None
        mag = abs(const)
        for j, c in zip(idx, coef):
            term = G.mul(columns[j], c)
            mag = mag + np.abs(term.data)
            acc = term if acc is None else G.add(acc, term)
        acc = G.add(acc, const)
        margin = 2.0 * (len(idx) + 5) * _U * mag + _TINY
        return G.add(acc, margin) if lower else G.sub(acc, margin)

    def __str__(self):
        return _expr_text(self.expr)


def _expr_text(e: LinExpr) -> str:
    parts = [f"{c}*{v.name}" if c != 1 else v.name for v, c in e.coeffs]
    if e.constant != 0 or not parts:
        parts.append(str(e.constant))
    return " + ".join(parts).replace("+ -", "- ")


@dataclass(frozen=True)
class Passthrough:
    def __str__(self):
        return "passthrough"


@dataclass(frozen=True)
class SetConst:
    value: Fraction

    def __str__(self):
        return f"const {self.value}"


@dataclass(frozen=True)
class LowerBound:
    bounds: tuple[Bound, ...]

    def __str__(self):
        return "lower max(" + ", ".join(map(str, self.bounds)) + ")"


@dataclass(frozen=True)
class UpperBound:
    bounds: tuple[Bound, ...]

    def __str__(self):
        return "upper min(" + ", ".join(map(str, self.bounds)) + ")"


@dataclass(frozen=True)
class Interval:
    lower: tuple[Bound, ...]
    upper: tuple[Bound, ...]

    def __str__(self):
        lo = ", ".join(map(str, self.lower))
        hi = ", ".join(map(str, self.upper))
        return f"interval (max({lo}), min({hi}))"


@dataclass(frozen=True)
class GroupMargin:
    """In-group logit ``g(r) + threshold + logsumexp(out-group raw logits)``."""

    in_group: frozenset[int]
    threshold: float
    out_group: tuple[int, ...]

    def __str__(self):
        return (f"group-margin t={self.threshold:.6g} "
                f"over lse{list(self.out_group)}")


Step = Passthrough | SetConst | LowerBound | UpperBound | Interval | GroupMargin


def _step_bounds(step) -> tuple[Bound, ...]:
    if isinstance(step, (LowerBound, UpperBound)):
        return step.bounds
    if isinstance(step, Interval):
        return step.lower + step.upper
    return ()


@dataclass(frozen=True)
class TransformProgram:
    """One output transform ``h_k``; ``term`` is None for group margins."""

    steps: tuple[Step, ...]
    var_order: tuple[VarId, ...]
    term: DnfTerm | None = None

    @cached_property
    def dependencies(self) -> dict[int, frozenset[int]]:
        deps = {}
        for i, step in enumerate(self.steps):
            deps[i] = frozenset(v.index for b in _step_bounds(step)
                                for v in b.expr.variables)
        return deps

    @cached_property
    def guarded(self) -> frozenset[int]:
        return frozenset().union(*self.dependencies.values())

    def __call__(self, raw):
        return apply(self, raw)


@dataclass(frozen=True)
class MultiplexHead:
    programs: tuple[TransformProgram, ...]
    var_order: tuple[VarId, ...]
    formula: Formula | None = None
    dropped: int = 0

    def __post_init__(self):
        if not self.programs:
            raise NoFeasibleTerm("a head needs at least one program")

    @property
    def k(self) -> int:
        return len(self.programs)

    def apply_all(self, raw) -> list:
        return [apply(p, raw) for p in self.programs]


# --------------------------------------------------------------------------
# compilation

def _var_list(var_order: Sequence[VarId | str]) -> tuple[VarId, ...]:
    out = []
    for i, v in enumerate(var_order):
        if isinstance(v, VarId):
            if v.index != i:
                raise ValueError(f"variable {v.name} has index {v.index}, expected {i}")
            out.append(v)
        else:
            out.append(VarId(i, v))
    if len({v.name for v in out}) != len(out):
        raise ValueError("duplicate names in var_order")
    return tuple(out)


def _pivot(a: Atom) -> tuple[VarId, Bound, str]:
    """Solve ``a`` for its highest-index variable."""
    (pivot, c) = a.lhs.coeffs[-1]
    rest = LinExpr(a.lhs.coeffs[:-1], a.lhs.constant)
    expr = rest.scale(-1 / c)
    cmp = a.cmp if c > 0 else a.cmp.flipped
    kind = {Cmp.GT: "lower", Cmp.GE: "lower", Cmp.LT: "upper",
            Cmp.LE: "upper", Cmp.EQ: "equal"}[cmp]
    return pivot, Bound(expr, cmp.strict), kind


def _check_order(term: DnfTerm, order: tuple[VarId, ...]):
    known = {v.name: v for v in order}
    for v in term.variables():
        if known.get(v.name) != v:
            raise CyclicDependency(
                f"variable {v.name!r} is not placed in var_order "
                f"{[u.name for u in order]}")


def _extract_equalities(term: DnfTerm) -> tuple[DnfTerm, dict[VarId, Fraction]]:
    consts: dict[VarId, Fraction] = {}
    while True:
        found = None
        for a in term.atoms:
            if a.cmp is Cmp.EQ and len(a.lhs.coeffs) == 1:
                found = a
                break
        if found is None:
            break
        (var, c), = found.lhs.coeffs
        consts[var] = -found.lhs.constant / c
        term = substitute_term(term, var, consts[var])
        if term is INFEASIBLE:
            raise InfeasibleTerm("equalities contradict the other atoms")
    for a in term.atoms:
        if a.cmp is Cmp.EQ:
            raise DependentEquality(
                f"equality over several variables is not supported: {a}")
    return term, consts


def compile_term(term: DnfTerm, var_order: Sequence[VarId | str],
                 max_atoms: int = 10_000) -> TransformProgram:
    """Build the transform for one conjunctive term.

    Raises InfeasibleTerm when the term has no interior solution,
    DependentEquality for ``x = f(y)`` atoms, and CyclicDependency when a
    variable of the term is missing from ``var_order``.
    """
    order = _var_list(var_order)
    _check_order(term, order)
    simple = simplify_term(term)
    if simple is INFEASIBLE:
        raise InfeasibleTerm("constant bounds are contradictory")
    simple, consts = _extract_equalities(simple)

    pool = {a.signature(): a for a in simple.atoms}
    lowers: dict[VarId, list[Bound]] = {}
    uppers: dict[VarId, list[Bound]] = {}
    for var in reversed(order):
        mine, rest = [], {}
        for sig, a in pool.items():
            if a.lhs.coeffs[-1][0] == var:
                mine.append(a)
            else:
                rest[sig] = a
        lo, hi = [], []
        for a in mine:
            _, bound, kind = _pivot(a)
            (lo if kind == "lower" else hi).append(bound)
        # project the pivot away: every lower must sit strictly below every upper
        for lb in lo:
            for ub in hi:
                derived = atom(ub.expr - lb.expr, Cmp.GT)
                if derived is FALSE:
                    raise InfeasibleTerm(f"{lb} < {var.name} < {ub} is empty")
                if derived is not TRUE:
                    rest.setdefault(derived.signature(), derived)
        if len(rest) > max_atoms:
            raise CompileError("variable elimination produced too many atoms")
        pool = rest
        lowers[var] = _dedupe(lo)
        uppers[var] = _dedupe(hi)

    steps = []
    for var in order:
        if var in consts:
            value = consts[var]
            if Fraction(float(value)) != value:
                raise InexactConstant(f"{var.name} = {value} has no float representation")
            steps.append(SetConst(value))
        elif lowers[var] and uppers[var]:
            steps.append(Interval(tuple(lowers[var]), tuple(uppers[var])))
        elif lowers[var]:
            steps.append(LowerBound(tuple(lowers[var])))
        elif uppers[var]:
            steps.append(UpperBound(tuple(uppers[var])))
        else:
            steps.append(Passthrough())
    return TransformProgram(tuple(steps), order, term)


def _dedupe(bounds: list[Bound]) -> list[Bound]:
    seen = {}
    for b in bounds:
        key = (tuple((v.index, c) for v, c in b.expr.coeffs), b.expr.constant)
        if key in seen:
            seen[key] = Bound(b.expr, seen[key].strict or b.strict)
        else:
            seen[key] = b
    return [seen[k] for k in sorted(seen, key=repr)]


def compile_formula(f: Formula, var_order: Sequence[VarId | str],
                    cap: int = DEFAULT_TERM_CAP) -> MultiplexHead:
    """Compile every feasible DNF term of ``f``; infeasible terms are dropped."""
    order = _var_list(var_order)
    names = {v.name for v in order}
    missing = sorted(v.name for v in free_vars(f) if v.name not in names)
    if missing:
        raise CyclicDependency(f"variables {missing} are not in var_order")
    dnf = to_dnf(f, cap)
    programs, dropped = [], 0
    for term in dnf.terms:
        try:
            programs.append(compile_term(term, order))
        except InfeasibleTerm:
            dropped += 1
    if not programs:
        raise NoFeasibleTerm("every DNF term is infeasible")
    return MultiplexHead(tuple(programs), order, f, dropped)


def compile_group_margin(groups: Sequence[Sequence[int]], alpha: float
                         ) -> list[TransformProgram]:
    """One program per group forcing that group's softmax mass above alpha."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    groups = [tuple(int(j) for j in g) for g in groups]
    if any(not g for g in groups):
        raise ValueError("empty group")
    flat = sorted(j for g in groups for j in g)
    if flat != list(range(len(flat))):
        raise ValueError("groups must partition 0..C-1")
    order = tuple(VarId(i, f"y{i}") for i in range(len(flat)))
    threshold = math.log(alpha / (1 - alpha))
    programs = []
    for g in groups:
        members = frozenset(g)
        out = tuple(j for j in flat if j not in members)
        if not out:
            steps = tuple(Passthrough() for _ in flat)
        else:
            step = GroupMargin(members, threshold, out)
            steps = tuple(step if j in members else Passthrough() for j in flat)
        programs.append(TransformProgram(steps, order, None))
    return programs


# --------------------------------------------------------------------------
# application

def _combine(values: list[G.Value], pick) -> G.Value:
    out = values[0]
    for v in values[1:]:
        out = pick(out, v)
    return out


def _next_up(x: np.ndarray) -> np.ndarray:
    return np.nextafter(x, np.inf)


def _next_down(x: np.ndarray) -> np.ndarray:
    return np.nextafter(x, -np.inf)


def _scale(*arrays) -> np.ndarray:
    m = np.ones_like(np.asarray(arrays[0], dtype=np.float64))
    for a in arrays:
        m = np.maximum(m, np.abs(a))
    return m


def apply(program: TransformProgram, raw):
    """Run ``program`` on ``raw`` of shape ``(J,)`` or ``(B, J)``.

    Returns a :class:`~multiplexnet.grad.Value` when ``raw`` is one, so the
    transform stays on the caller's tape; otherwise a numpy array.
    """
    as_array = not isinstance(raw, G.Value)
    raw = G.as_value(raw)
    if not np.all(np.isfinite(raw.data)):
        raise NonFiniteInput("raw input contains non-finite entries")
    if raw.shape[-1] != len(program.steps):
        raise ValueError(f"expected {len(program.steps)} raw outputs, got {raw.shape[-1]}")
    guarded = program.guarded
    cols: dict[int, G.Value] = {}
    lse_cache = {}
    for i, step in enumerate(program.steps):
        r = G.take(raw, i)
        if isinstance(step, Passthrough):
            out = r
        elif isinstance(step, SetConst):
            out = G.constant(np.full(r.shape, float(step.value)))
        elif isinstance(step, LowerBound):
            lo = _combine([b.evaluate(cols, True) for b in step.bounds], G.maximum)
            out = G.add(lo, G.softplus(r))
            gap = GUARD * _scale(lo.data) if i in guarded else 0.0
            floor = _next_up(np.broadcast_to(lo.data + gap, r.shape))
            out = G.maximum(out, floor)
        elif isinstance(step, UpperBound):
            hi = _combine([b.evaluate(cols, False) for b in step.bounds], G.minimum)
            out = G.sub(hi, G.softplus(G.neg(r)))
            gap = GUARD * _scale(hi.data) if i in guarded else 0.0
            ceil = _next_down(np.broadcast_to(hi.data - gap, r.shape))
            out = G.minimum(out, ceil)
        elif isinstance(step, Interval):
            lo = _combine([b.evaluate(cols, True) for b in step.lower], G.maximum)
            hi = _combine([b.evaluate(cols, False) for b in step.upper], G.minimum)
            width = G.sub(hi, lo)
            if np.any(width.data <= 0):
                raise CompileError(f"interval for {program.var_order[i].name} "
                                   "collapsed at runtime")
            out = G.sub(hi, G.softplus(G.sub(G.log_expm1(width), G.softplus(r))))
            if i in guarded:
                gap = np.minimum(GUARD * _scale(lo.data, hi.data), width.data / 8)
            else:
                gap = 0.0
            floor = _next_up(np.broadcast_to(lo.data + gap, r.shape))
            ceil = _next_down(np.broadcast_to(hi.data - gap, r.shape))
            if np.any(floor > ceil):
                raise CompileError(f"interval for {program.var_order[i].name} "
                                   "has no float strictly inside")
            out = G.maximum(G.minimum(out, ceil), floor)
        elif isinstance(step, GroupMargin):
            key = step.out_group
            if key not in lse_cache:
                lse_cache[key] = G.logsumexp(G.gather_columns(raw, list(key)))
            lse = lse_cache[key]
            base = G.add(lse, step.threshold)
            out = G.add(G.softplus(r), base)
            slack = 8 * _U * (abs(step.threshold) + np.abs(lse.data)) + _TINY
            out = G.maximum(out, _next_up(np.broadcast_to(base.data + slack, r.shape)))
        else:
            raise TypeError(f"unknown step {step!r}")
        cols[i] = out
    result = G.stack([cols[i] for i in range(len(program.steps))], axis=-1)
    return result.data.copy() if as_array else result


def describe(program: TransformProgram) -> str:
    lines = []
    if program.term is not None:
        lines.append("term: " + " & ".join(_atom_desc(a) for a in program.term.atoms))
    for v, step in zip(program.var_order, program.steps):
        deps = sorted(program.var_order[j].name for j in program.dependencies[v.index])
        dep = f"  <- {', '.join(deps)}" if deps else ""
        lines.append(f"  {v.name}: {step}{dep}")
    return "\n".join(lines)


def _atom_desc(a: Atom) -> str:
    return f"{_expr_text(a.lhs)} {a.cmp.value} 0"
