"""A small reverse-mode differentiation engine over numpy arrays.

Values created from a :class:`Tape` record their parents and local
vector-Jacobian products; everything else is a constant. Shapes must match
exactly, except that a 0-d operand may be combined with any array. The
batched ops (``affine``, the axis reductions, column gathers) are the only
places where a leading batch axis is treated specially.

    >>> tape = Tape()
    >>> x = tape.variable(3.0)
    >>> y = tape.variable(7.0)
    >>> grads = tape.backward(x * y)
    >>> float(grads[x])
    7.0
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

__all__ = [
    "Value", "Tape", "Gradients", "ShapeError", "constant", "as_value",
    "add", "sub", "mul", "div", "neg", "exp", "log", "sqrt", "square",
    "softplus", "sigmoid", "tanh", "log_expm1", "logsumexp", "log_softmax",
    "softmax", "sum", "mean", "matvec", "affine", "maximum", "minimum",
    "take", "stack", "concat", "gather_columns", "pick",
    "finite_diff_check", "FiniteDiffReport",
]


class ShapeError(ValueError):
    pass


class Value:
    __slots__ = ("data", "tape", "id", "parents")
    __array_priority__ = 100

    def __init__(self, data, tape: "Tape | None" = None, parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.parents = parents
        self.id = tape._register(self) if tape is not None else -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        where = f"node {self.id}" if self.tape is not None else "const"
        return f"Value({self.data!r}, {where})"

    def __float__(self):
        return float(self.data)

    def __len__(self):
        return len(self.data)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)


class Gradients(dict):
    """Node id -> gradient; nodes the output does not reach map to zeros."""

    def __init__(self, tape: "Tape"):
        super().__init__()
        self._tape = tape

    def __getitem__(self, key):
        if isinstance(key, Value):
            if key.tape is not self._tape:
                return np.zeros_like(key.data)
            key = key.id
        if key in self.keys():
            return dict.__getitem__(self, key)
        return np.zeros_like(self._tape.nodes[key].data)


class Tape:
    """Records op nodes in creation order, which is a topological order."""

    def __init__(self):
        self.nodes: list[Value] = []

    def _register(self, v: Value) -> int:
        self.nodes.append(v)
        return len(self.nodes) - 1

    def variable(self, data) -> Value:
        return Value(np.array(data, dtype=np.float64), self)

    def backward(self, out: Value) -> Gradients:
        if out.tape is not self:
            raise ValueError("output was not recorded on this tape")
        if out.data.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {out.shape}")
        grads = Gradients(self)
        grads[out.id] = np.ones_like(out.data)
        for node in reversed(self.nodes[: out.id + 1]):
            g = dict.get(grads, node.id)
            if g is None:
                continue
            for parent, vjp in node.parents:
                contrib = vjp(g)
                prev = dict.get(grads, parent.id)
                grads[parent.id] = contrib if prev is None else prev + contrib
        return grads


def constant(data) -> Value:
    return Value(data)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _result(data, inputs: Sequence[Value], vjps: Sequence[Callable]) -> Value:
    tape = None
    for v in inputs:
        if v.tape is not None:
            if tape is not None and v.tape is not tape:
                raise ValueError("operands live on different tapes")
            tape = v.tape
    if tape is None:
        return Value(data)
    parents = tuple((v, f) for v, f in zip(inputs, vjps) if v.tape is tape)
    return Value(data, tape, parents)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _check_binary(a: Value, b: Value):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# elementwise

def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_binary(a, b)
    return _result(a.data + b.data, (a, b), (
        lambda g: _unbroadcast(g, a.shape),
        lambda g: _unbroadcast(g, b.shape)))


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_binary(a, b)
    return _result(a.data - b.data, (a, b), (
        lambda g: _unbroadcast(g, a.shape),
        lambda g: _unbroadcast(-g, b.shape)))


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_binary(a, b)
    return _result(a.data * b.data, (a, b), (
        lambda g: _unbroadcast(g * b.data, a.shape),
        lambda g: _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_binary(a, b)
    out = a.data / b.data
    return _result(out, (a, b), (
        lambda g: _unbroadcast(g / b.data, a.shape),
        lambda g: _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Value:
    a = as_value(a)
    return _result(-a.data, (a,), (lambda g: -g,))


def exp(a) -> Value:
    a = as_value(a)
    out = np.exp(a.data)
    return _result(out, (a,), (lambda g: g * out,))


def log(a) -> Value:
    a = as_value(a)
    return _result(np.log(a.data), (a,), (lambda g: g / a.data,))


def sqrt(a) -> Value:
    a = as_value(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), (lambda g: g * 0.5 / out,))


def square(a) -> Value:
    a = as_value(a)
    return _result(a.data * a.data, (a,), (lambda g: 2.0 * g * a.data,))


def softplus(a) -> Value:
    """log(1 + exp(a)), strictly positive."""
    a = as_value(a)
    return _result(kernels.softplus(a.data), (a,),
                   (lambda g: g * kernels.sigmoid(a.data),))


def sigmoid(a) -> Value:
    a = as_value(a)
    out = kernels.sigmoid(a.data)
    return _result(out, (a,), (lambda g: g * out * (1.0 - out),))


def tanh(a) -> Value:
    a = as_value(a)
    out = np.tanh(a.data)
    return _result(out, (a,), (lambda g: g * (1.0 - out * out),))


def log_expm1(a) -> Value:
    """log(exp(a) - 1), the softplus offset for an interval of width ``a``."""
    a = as_value(a)
    if np.any(a.data <= 0):
        raise ValueError("log_expm1 needs strictly positive input")
    return _result(kernels.log_expm1(a.data), (a,),
                   (lambda g: g * kernels.log_expm1_grad(a.data),))


def maximum(a, b) -> Value:
    """Pairwise max; ties send the gradient to ``a``."""
    a, b = as_value(a), as_value(b)
    _check_binary(a, b)
    first = a.data >= b.data
    return _result(np.where(first, a.data, b.data), (a, b), (
        lambda g: _unbroadcast(np.where(first, g, 0.0), a.shape),
        lambda g: _unbroadcast(np.where(first, 0.0, g), b.shape)))


def minimum(a, b) -> Value:
    """Pairwise min; ties send the gradient to ``a``."""
    a, b = as_value(a), as_value(b)
    _check_binary(a, b)
    first = a.data <= b.data
    return _result(np.where(first, a.data, b.data), (a, b), (
        lambda g: _unbroadcast(np.where(first, g, 0.0), a.shape),
        lambda g: _unbroadcast(np.where(first, 0.0, g), b.shape)))


# --------------------------------------------------------------------------
# reductions

def sum(a, axis=None) -> Value:  # noqa: A001
    a = as_value(a)
    if a.data.size == 0:
        raise ShapeError("empty reduction")
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return np.full(a.shape, g, dtype=np.float64)
        return np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()
    return _result(out, (a,), (vjp,))


def mean(a, axis=None) -> Value:
    a = as_value(a)
    n = a.data.size if axis is None else a.shape[axis]
    return div(sum(a, axis), float(n))


def logsumexp(a, axis=-1) -> Value:
    """Max-shifted log-sum-exp over ``axis`` (the last one by default)."""
    a = as_value(a)
    if a.data.size == 0 or a.shape[axis] == 0:
        raise ShapeError("logsumexp of an empty array")
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    s = shifted.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)
    weights = shifted / s
    return _result(out, (a,), (lambda g: np.expand_dims(g, axis) * weights,))


def log_softmax(a) -> Value:
    a = as_value(a)
    if a.data.size == 0:
        raise ShapeError("log_softmax of an empty array")
    m = np.max(a.data, axis=-1, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _result(out, (a,),
                   (lambda g: g - p * g.sum(axis=-1, keepdims=True),))


def softmax(a) -> Value:
    return exp(log_softmax(a))


# --------------------------------------------------------------------------
# linear algebra and indexing

def matvec(w, x) -> Value:
    w, x = as_value(w), as_value(x)
    if w.ndim != 2 or x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec shapes {w.shape} @ {x.shape}")
    return _result(w.data @ x.data, (w, x), (
        lambda g: np.outer(g, x.data),
        lambda g: w.data.T @ g))


def affine(w, b, x) -> Value:
    """``x @ w.T + b`` for one sample ``(n,)`` or a batch ``(B, n)``."""
    w, b, x = as_value(w), as_value(b), as_value(x)
    if w.ndim != 2 or b.shape != (w.shape[0],) or x.shape[-1] != w.shape[1] \
            or x.ndim not in (1, 2):
        raise ShapeError(f"affine shapes w={w.shape} b={b.shape} x={x.shape}")
    out = x.data @ w.data.T + b.data

    def vjp_w(g):
        return np.outer(g, x.data) if x.ndim == 1 else g.T @ x.data

    def vjp_b(g):
        return g if x.ndim == 1 else g.sum(axis=0)

    return _result(out, (w, b, x), (vjp_w, vjp_b, lambda g: g @ w.data))


def take(a, j: int) -> Value:
    """Column ``j`` of a ``(B, n)`` array, or entry ``j`` of a vector."""
    a = as_value(a)

    def vjp(g):
        out = np.zeros_like(a.data)
        out[..., j] = g
        return out
    return _result(a.data[..., j], (a,), (vjp,))


def stack(values: Sequence, axis=-1) -> Value:
    vals = [as_value(v) for v in values]
    if not vals:
        raise ShapeError("stack of nothing")
    shape = vals[0].shape
    if any(v.shape != shape for v in vals):
        raise ShapeError("stack needs equal shapes")
    out = np.stack([v.data for v in vals], axis=axis)
    vjps = [(lambda g, i=i: np.take(g, i, axis=axis)) for i in range(len(vals))]
    return _result(out, vals, vjps)


def concat(values: Sequence, axis=-1) -> Value:
    vals = [as_value(v) for v in values]
    out = np.concatenate([v.data for v in vals], axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    vjps = [(lambda g, lo=lo, hi=hi: np.take(g, np.arange(lo, hi), axis=axis))
            for lo, hi in zip(bounds[:-1], bounds[1:])]
    return _result(out, vals, vjps)


def gather_columns(a, cols) -> Value:
    """``a[..., cols]``; repeated columns accumulate their gradients."""
    a = as_value(a)
    cols = np.asarray(cols, dtype=np.intp)

    def vjp(g):
        out = np.zeros_like(a.data)
        if a.ndim == 1:
            np.add.at(out, cols, g)
        else:
            np.add.at(out.T, cols, g.T)
        return out
    return _result(a.data[..., cols], (a,), (vjp,))


def pick(a, index) -> Value:
    """``a[i, index[i]]`` for a ``(B, n)`` array, or ``a[index]`` for a vector."""
    a = as_value(a)
    index = np.asarray(index, dtype=np.intp)
    if a.ndim == 1:
        return take(a, int(index))
    rows = np.arange(a.shape[0])
    if index.shape != (a.shape[0],):
        raise ShapeError("pick needs one index per row")
    if np.any(index < 0) or np.any(index >= a.shape[1]):
        raise IndexError("pick index out of range")

    def vjp(g):
        out = np.zeros_like(a.data)
        out[rows, index] = g
        return out
    return _result(a.data[rows, index], (a,), (vjp,))


# --------------------------------------------------------------------------
# gradient checking

class FiniteDiffReport:
    def __init__(self, analytic, numeric, rel_err, skipped, tol):
        self.analytic = analytic
        self.numeric = numeric
        self.rel_err = rel_err
        self.skipped = skipped
        self.tol = tol

    @property
    def max_rel_err(self) -> float:
        checked = self.rel_err[~self.skipped]
        return float(checked.max()) if checked.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def __repr__(self):
        status = "pass" if self.passed else "FAIL"
        return (f"FiniteDiffReport({status}, max_rel_err={self.max_rel_err:.3g}, "
                f"skipped={int(self.skipped.sum())})")


def finite_diff_check(fn: Callable[[Value], Value], point, step: float = 1e-5,
                      tol: float = 1e-4, kink: Callable[[np.ndarray], np.ndarray] | None = None
                      ) -> FiniteDiffReport:
    """Compare the tape gradient of scalar ``fn`` with central differences.

    Relative error is ``|a - n| / max(1, |a|, |n|)``. A coordinate is skipped
    when the one-sided differences disagree by more than the tolerance
    (a kink such as a max tie inside the stencil) or when ``kink`` flags it.
    """
    point = np.array(point, dtype=np.float64)
    tape = Tape()
    x = tape.variable(point)
    out = fn(x)
    analytic = tape.backward(out)[x].reshape(-1)

    def f(p):
        return float(fn(Value(p)).data)

    f0 = f(point)
    flat = point.reshape(-1)
    numeric = np.empty_like(analytic)
    skipped = np.zeros(flat.size, dtype=bool)
    for i in range(flat.size):
        up = flat.copy()
        up[i] += step
        dn = flat.copy()
        dn[i] -= step
        fu, fd = f(up.reshape(point.shape)), f(dn.reshape(point.shape))
        numeric[i] = (fu - fd) / (2 * step)
        fwd, bwd = (fu - f0) / step, (f0 - fd) / step
        # one-sided slopes differ by ~step * f'' on smooth stretches
        scale = max(1.0, abs(fwd), abs(bwd))
        if abs(fwd - bwd) / scale > max(1e3 * step, 10 * tol):
            skipped[i] = True
    if kink is not None:
        skipped |= np.asarray(kink(point), dtype=bool).reshape(-1)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    rel = np.abs(analytic - numeric) / denom
    return FiniteDiffReport(analytic, numeric, rel, skipped, tol)
