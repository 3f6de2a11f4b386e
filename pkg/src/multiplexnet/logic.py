"""Quantifier-free linear real arithmetic formulas.

Formulas are immutable trees of linear atoms joined by ``!``, ``&`` and ``|``.
Coefficients are kept as :class:`fractions.Fraction` so that evaluation and
equivalence checks are exact.

Concrete syntax::

    formula := or ; or := and ("|" and)* ; and := unary ("&" unary)*
    unary   := "!" unary | "(" formula ")" | atom
    atom    := linexpr cmp linexpr ; cmp := ">=" | "<=" | ">" | "<" | "="
    linexpr := ["-"] term (("+"|"-") term)*
    term    := number | number "*" ident | ident
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

__all__ = [
    "VarId", "Cmp", "LinExpr", "Atom", "Not", "And", "Or", "TRUE", "FALSE",
    "Formula", "LogicError", "ParseError", "UnknownIdentifier",
    "MissingVariable", "parse", "to_text", "evaluate", "free_vars",
    "make_vars", "atom", "evaluate_many",
]


class LogicError(Exception):
    pass


class ParseError(LogicError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnknownIdentifier(ParseError):
    def __init__(self, name: str, line: int, column: int):
        super().__init__(f"unknown identifier {name!r}", line, column)
        self.name = name


class MissingVariable(LogicError, KeyError):
    pass


@dataclass(frozen=True, order=True)
class VarId:
    index: int
    name: str

    def __str__(self):
        return self.name


def make_vars(names: Sequence[str]) -> list[VarId]:
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate variable names in {list(names)}")
    return [VarId(i, n) for i, n in enumerate(names)]


class Cmp(enum.Enum):
    GT = ">"
    GE = ">="
    LT = "<"
    LE = "<="
    EQ = "="

    @property
    def negated(self) -> "Cmp":
        return _NEGATE[self]

    @property
    def flipped(self) -> "Cmp":
        """Comparator after multiplying both sides by a negative number."""
        return _FLIP[self]

    @property
    def strict(self) -> bool:
        return self in (Cmp.GT, Cmp.LT)

    def holds(self, value) -> bool:
        """Truth of ``value <cmp> 0``."""
        if self is Cmp.GT:
            return value > 0
        if self is Cmp.GE:
            return value >= 0
        if self is Cmp.LT:
            return value < 0
        if self is Cmp.LE:
            return value <= 0
        return value == 0


_NEGATE = {Cmp.GT: Cmp.LE, Cmp.GE: Cmp.LT, Cmp.LT: Cmp.GE, Cmp.LE: Cmp.GT}
_FLIP = {Cmp.GT: Cmp.LT, Cmp.GE: Cmp.LE, Cmp.LT: Cmp.GT, Cmp.LE: Cmp.GE,
         Cmp.EQ: Cmp.EQ}


@dataclass(frozen=True)
class LinExpr:
    """``sum(c * x for x, c in coeffs) + constant``; coeffs sorted by index."""

    coeffs: tuple[tuple[VarId, Fraction], ...] = ()
    constant: Fraction = Fraction(0)

    @classmethod
    def build(cls, coeffs: Mapping[VarId, Fraction] | Iterable[tuple[VarId, Fraction]],
              constant=0) -> "LinExpr":
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        acc: dict[VarId, Fraction] = {}
        for v, c in items:
            acc[v] = acc.get(v, Fraction(0)) + Fraction(c)
        kept = tuple(sorted(((v, c) for v, c in acc.items() if c != 0),
                            key=lambda vc: vc[0].index))
        return cls(kept, Fraction(constant))

    @property
    def variables(self) -> tuple[VarId, ...]:
        return tuple(v for v, _ in self.coeffs)

    def coeff(self, var: VarId) -> Fraction:
        for v, c in self.coeffs:
            if v == var:
                return c
        return Fraction(0)

    def __add__(self, other: "LinExpr") -> "LinExpr":
        return LinExpr.build(self.coeffs + other.coeffs,
                             self.constant + other.constant)

    def scale(self, k) -> "LinExpr":
        k = Fraction(k)
        return LinExpr.build([(v, c * k) for v, c in self.coeffs],
                             self.constant * k)

    def __neg__(self) -> "LinExpr":
        return self.scale(-1)

    def __sub__(self, other: "LinExpr") -> "LinExpr":
        return self + (-other)

    def substitute(self, var: VarId, value) -> "LinExpr":
        c = self.coeff(var)
        if c == 0:
            return self
        return LinExpr.build([(v, k) for v, k in self.coeffs if v != var],
                             self.constant + c * Fraction(value))

    def value(self, assignment: Mapping[VarId, Fraction]) -> Fraction:
        total = self.constant
        for v, c in self.coeffs:
            total += c * assignment[v]
        return total

    def sign(self, assignment: Mapping[VarId, Fraction]) -> int:
        """Sign of :meth:`value`, in integer arithmetic."""
        num, den = self.constant.numerator, self.constant.denominator
        for v, c in self.coeffs:
            x = assignment[v]
            td = c.denominator * x.denominator
            num = num * td + c.numerator * x.numerator * den
            den *= td
        return (num > 0) - (num < 0)


@dataclass(frozen=True)
class Atom:
    """``lhs <cmp> 0``."""

    lhs: LinExpr
    cmp: Cmp

    @property
    def variables(self) -> tuple[VarId, ...]:
        return self.lhs.variables

    def signature(self):
        return (tuple((v.index, c) for v, c in self.lhs.coeffs),
                self.lhs.constant, self.cmp.value)


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    args: tuple["Formula", ...]

    def __post_init__(self):
        if not self.args:
            raise ValueError("And needs at least one argument")


@dataclass(frozen=True)
class Or:
    args: tuple["Formula", ...]

    def __post_init__(self):
        if not self.args:
            raise ValueError("Or needs at least one argument")


class _Const:
    __slots__ = ("value",)

    def __init__(self, value: bool):
        self.value = value

    def __repr__(self):
        return "TRUE" if self.value else "FALSE"

    def __reduce__(self):
        return (_const, (self.value,))


def _const(value: bool) -> "_Const":
    return TRUE if value else FALSE


TRUE = _Const(True)
FALSE = _Const(False)

Formula = Union[Atom, Not, And, Or, _Const]


def atom(lhs: LinExpr, cmp: Cmp) -> Formula:
    """Build an atom, folding it to TRUE/FALSE when it has no variables."""
    if not lhs.coeffs:
        return _const(cmp.holds(lhs.constant))
    return Atom(lhs, cmp)


# --------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<number>\d+(?:\.\d*)?|\.\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<cmp>>=|<=|>|<|=)
  | (?P<op>[-+*&|!()])
""", re.VERBOSE)


@dataclass
class _Token:
    kind: str
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}",
                             line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "ws":
            for i in range(m.start(), m.end()):
                if text[i] == "\n":
                    line += 1
                    line_start = i + 1
        else:
            tokens.append(_Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, var_order: Sequence[str | VarId]):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.vars = {}
        for i, v in enumerate(var_order):
            var = v if isinstance(v, VarId) else VarId(i, v)
            self.vars[var.name] = var

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def error(self, message: str):
        raise ParseError(message, self.tok.line, self.tok.column)

    def accept(self, text: str) -> bool:
        if self.tok.kind in ("op", "cmp") and self.tok.text == text:
            self.pos += 1
            return True
        return False

    def expect(self, text: str):
        if not self.accept(text):
            found = self.tok.text or "end of input"
            self.error(f"expected {text!r}, found {found!r}")

    def parse(self) -> Formula:
        f = self.disjunction()
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.text!r}")
        return f

    def disjunction(self) -> Formula:
        args = [self.conjunction()]
        while self.accept("|"):
            args.append(self.conjunction())
        return args[0] if len(args) == 1 else Or(tuple(args))

    def conjunction(self) -> Formula:
        args = [self.unary()]
        while self.accept("&"):
            args.append(self.unary())
        return args[0] if len(args) == 1 else And(tuple(args))

    def unary(self) -> Formula:
        if self.accept("!"):
            return Not(self.unary())
        if self.accept("("):
            f = self.disjunction()
            self.expect(")")
            return f
        return self.atom()

    def atom(self) -> Formula:
        lhs = self.linexpr()
        if self.tok.kind != "cmp":
            self.error("expected comparison operator")
        cmp = Cmp(self.tok.text)
        self.pos += 1
        rhs = self.linexpr()
        return atom(lhs - rhs, cmp)

    def linexpr(self) -> LinExpr:
        terms = []
        sign = -1 if self.accept("-") else 1
        terms.append(self.term(sign))
        while True:
            if self.accept("+"):
                terms.append(self.term(1))
            elif self.accept("-"):
                terms.append(self.term(-1))
            else:
                break
        expr = LinExpr()
        for t in terms:
            expr = expr + t
        return expr

    def term(self, sign: int) -> LinExpr:
        tok = self.tok
        if tok.kind == "number":
            self.pos += 1
            value = Fraction(tok.text) * sign
            if self.accept("*"):
                return LinExpr.build([(self.ident(), value)])
            return LinExpr((), value)
        if tok.kind == "ident":
            return LinExpr.build([(self.ident(), Fraction(sign))])
        found = tok.text or "end of input"
        self.error(f"expected number or identifier, found {found!r}")

    def ident(self) -> VarId:
        tok = self.tok
        if tok.kind != "ident":
            self.error("expected identifier")
        self.pos += 1
        try:
            return self.vars[tok.text]
        except KeyError:
            raise UnknownIdentifier(tok.text, tok.line, tok.column) from None


def parse(text: str, var_order: Sequence[str | VarId]) -> Formula:
    """Parse ``text`` into a formula over the variables in ``var_order``.

    Constant atoms such as ``3 > 2`` are folded to TRUE/FALSE.

    >>> x, y = make_vars(["x", "y"])
    >>> parse("x > 3.5 & y > 0", ["x", "y"]) == And((
    ...     Atom(LinExpr.build({x: 1}, Fraction(-7, 2)), Cmp.GT),
    ...     Atom(LinExpr.build({y: 1}), Cmp.GT)))
    True
    """
    return _Parser(text, var_order).parse()


# --------------------------------------------------------------------------
# printing

def _decimal(q: Fraction) -> str:
    if q.denominator == 1:
        return str(q.numerator)
    den = q.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        raise ValueError(f"{q} has no finite decimal expansion")
    places = max(twos, fives)
    scaled = q * 10 ** places
    digits = str(abs(scaled.numerator)).rjust(places + 1, "0")
    sign = "-" if q < 0 else ""
    return f"{sign}{digits[:-places]}.{digits[-places:]}"


def _side(terms: list[tuple[VarId | None, Fraction]]) -> str:
    if not terms:
        return "0"
    parts = []
    for v, c in terms:
        if v is None:
            parts.append(_decimal(c))
        elif c == 1:
            parts.append(v.name)
        else:
            parts.append(f"{_decimal(c)}*{v.name}")
    return " + ".join(parts)


def _atom_text(a: Atom) -> str:
    # positive terms stay left, negative ones move right; reparses to the same lhs
    left, right = [], []
    for v, c in a.lhs.coeffs:
        (left if c > 0 else right).append((v, abs(c)))
    k = a.lhs.constant
    if k > 0:
        left.append((None, k))
    elif k < 0:
        right.append((None, -k))
    return f"{_side(left)} {a.cmp.value} {_side(right)}"


def to_text(f: Formula) -> str:
    """Render ``f`` in the concrete syntax accepted by :func:`parse`."""
    if f is TRUE:
        return "0 = 0"
    if f is FALSE:
        return "0 = 1"
    if isinstance(f, Atom):
        return _atom_text(f)
    if isinstance(f, Not):
        inner = to_text(f.arg)
        if isinstance(f.arg, (Not,)):
            return "!" + inner
        return f"!({inner})"
    if isinstance(f, And):
        return " & ".join(
            f"({to_text(a)})" if isinstance(a, (And, Or)) or a is TRUE or a is FALSE
            else to_text(a) for a in f.args)
    if isinstance(f, Or):
        return " | ".join(
            f"({to_text(a)})" if isinstance(a, Or) or a is TRUE or a is FALSE
            else to_text(a) for a in f.args)
    raise TypeError(f"not a formula: {f!r}")


# --------------------------------------------------------------------------
# semantics

def _normalize_assignment(f: Formula, assignment) -> dict[VarId, Fraction]:
    by_name = {}
    for k, v in assignment.items():
        name = k.name if isinstance(k, VarId) else k
        by_name[name] = v if isinstance(v, Fraction) else Fraction(v)
    out = {}
    for var in free_vars(f):
        try:
            out[var] = by_name[var.name]
        except KeyError:
            raise MissingVariable(f"no value for variable {var.name!r}") from None
    return out


def evaluate(f: Formula, assignment: Mapping) -> bool:
    """Exact truth value of ``f``; values are converted with ``Fraction``.

    Floats are converted exactly (``Fraction(0.1) != Fraction(1, 10)``).
    """
    return _eval(f, _normalize_assignment(f, assignment))


def _eval(f: Formula, a: Mapping[VarId, Fraction]) -> bool:
    if isinstance(f, Atom):
        return f.cmp.holds(f.lhs.sign(a))
    if isinstance(f, And):
        return all(_eval(g, a) for g in f.args)
    if isinstance(f, Or):
        return any(_eval(g, a) for g in f.args)
    if isinstance(f, Not):
        return not _eval(f.arg, a)
    if isinstance(f, _Const):
        return f.value
    raise TypeError(f"not a formula: {f!r}")


def free_vars(f: Formula) -> frozenset[VarId]:
    found = set()
    stack = [f]
    while stack:
        g = stack.pop()
        if isinstance(g, Atom):
            found.update(v for v, _ in g.lhs.coeffs)
        elif isinstance(g, Not):
            stack.append(g.arg)
        elif isinstance(g, (And, Or)):
            stack.extend(g.args)
    return frozenset(found)


def atoms(f: Formula) -> Iterable[Atom]:
    if isinstance(f, Atom):
        yield f
    elif isinstance(f, Not):
        yield from atoms(f.arg)
    elif isinstance(f, (And, Or)):
        for g in f.args:
            yield from atoms(g)


def evaluate_many(f: Formula, var_order: Sequence[VarId | str], X) -> "np.ndarray":
    """Exact truth of ``f`` for every row of the float matrix ``X``.

    Each atom is decided in floating point when its value clears a
    rounding-error bound and recomputed with Fractions otherwise, so the
    result equals ``evaluate`` row by row.
    """
    import numpy as np

    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(var_order):
        raise ValueError(f"expected an (n, {len(var_order)}) array, got {X.shape}")
    col = {}
    for i, v in enumerate(var_order):
        col[v.name if isinstance(v, VarId) else v] = i
    for v in free_vars(f):
        if v.name not in col:
            raise MissingVariable(f"no column for variable {v.name!r}")
    cache: dict[Atom, np.ndarray] = {}

    def atom_truth(a: Atom) -> np.ndarray:
        if a in cache:
            return cache[a]
        val = np.full(len(X), float(a.lhs.constant))
        mag = np.abs(val)
        for v, c in a.lhs.coeffs:
            t = float(c) * X[:, col[v.name]]
            val = val + t
            mag = mag + np.abs(t)
        bound = 4 * (len(a.lhs.coeffs) + 3) * 2.0 ** -53 * mag + 1e-300
        sure = np.abs(val) > bound
        truth = np.zeros(len(X), dtype=bool)
        sv = val[sure]
        truth[sure] = {Cmp.GT: sv > 0, Cmp.GE: sv > 0, Cmp.LT: sv < 0,
                       Cmp.LE: sv < 0, Cmp.EQ: np.zeros(len(sv), bool)}[a.cmp]
        for r in np.flatnonzero(~sure):
            exact = a.lhs.constant
            for v, c in a.lhs.coeffs:
                exact += c * Fraction(float(X[r, col[v.name]]))
            truth[r] = a.cmp.holds(exact)
        cache[a] = truth
        return truth

    def walk(g: Formula) -> np.ndarray:
        if isinstance(g, Atom):
            return atom_truth(g)
        if isinstance(g, Not):
            return ~walk(g.arg)
        if isinstance(g, And):
            out = walk(g.args[0]).copy()
            for h in g.args[1:]:
                out &= walk(h)
            return out
        if isinstance(g, Or):
            out = walk(g.args[0]).copy()
            for h in g.args[1:]:
                out |= walk(h)
            return out
        return np.full(len(X), g.value, dtype=bool)

    return walk(f)
