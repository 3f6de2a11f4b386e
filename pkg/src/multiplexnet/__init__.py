"""Compile linear real arithmetic constraints into differentiable output
layers whose outputs always satisfy them, plus the losses and training
code that go with such layers."""
from .logic import (And, Atom, Cmp, LinExpr, Not, Or, VarId, evaluate, evaluate_many,
                    make_vars, parse, to_text)
from .dnf import DnfFormula, DnfTerm, simplify_term, to_dnf, to_nnf
from .layerc import (MultiplexHead, TransformProgram, apply, compile_formula,
                     compile_group_margin, compile_term, describe)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "And", "Atom", "Cmp", "LinExpr", "Not", "Or", "VarId", "evaluate",
    "evaluate_many", "make_vars", "parse", "to_text", "DnfFormula", "DnfTerm",
    "simplify_term", "to_dnf", "to_nnf", "MultiplexHead", "TransformProgram",
    "apply", "compile_formula", "compile_group_margin", "compile_term",
    "describe", "BACKEND",
]
