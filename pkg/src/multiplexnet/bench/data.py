"""Synthetic data sets standing in for the three experiments."""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from typing import Sequence

import numpy as np

from ..logic import Formula, evaluate_many, parse
from ..nets import valid_tuples


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BoxRegion:
    """Axis-aligned box; ``bounds[d] = (low, high)`` with low < high."""

    bounds: tuple[tuple[Fraction, Fraction], ...]

    def __post_init__(self):
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ConfigError(f"box side ({lo}, {hi}) is empty")

    @classmethod
    def of(cls, bounds) -> "BoxRegion":
        return cls(tuple((Fraction(str(lo)), Fraction(str(hi))) for lo, hi in bounds))

    def contains(self, other: "BoxRegion") -> bool:
        return all(a_lo <= b_lo and b_hi <= a_hi
                   for (a_lo, a_hi), (b_lo, b_hi) in zip(self.bounds, other.bounds))

    def text(self, names: Sequence[str]) -> str:
        parts = []
        for name, (lo, hi) in zip(names, self.bounds):
            parts.append(f"{name} >= {_num(lo)} & {name} <= {_num(hi)}")
        return "(" + " & ".join(parts) + ")"

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo = np.array([float(b[0]) for b in self.bounds])
        hi = np.array([float(b[1]) for b in self.bounds])
        return lo + (hi - lo) * rng.random((n, len(self.bounds)))


def _num(q: Fraction) -> str:
    from ..logic import _decimal
    return _decimal(q) if q >= 0 else f"-{_decimal(-q)}"


def load_six_mode(path=None) -> dict:
    if path is None:
        text = resources.files(__package__).joinpath("configs/six_mode.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return json.loads(text)


def six_mode_formula(geometry: dict) -> tuple[str, list[str]]:
    names = geometry["var_order"]
    boxes = [BoxRegion.of(b) for b in geometry["constraint_boxes"]]
    return " | ".join(b.text(names) for b in boxes), names


def gen_six_mode(n: int, rng: np.random.Generator, geometry: dict | None = None
                 ) -> tuple[np.ndarray, Formula, list[str]]:
    """Uniform samples from the data boxes, plus the disjunction of the
    constraint boxes as a formula."""
    if n < 1:
        raise ConfigError("N must be at least 1")
    geometry = geometry or load_six_mode()
    constraint = [BoxRegion.of(b) for b in geometry["constraint_boxes"]]
    data = [BoxRegion.of(b) for b in geometry["data_boxes"]]
    for i, d in enumerate(data):
        if not any(c.contains(d) for c in constraint):
            raise ConfigError(f"data box {i} is not inside any constraint box")
    text, names = six_mode_formula(geometry)
    formula = parse(text, names)
    which = rng.integers(len(data), size=n)
    x = np.empty((n, len(names)))
    for i, box in enumerate(data):
        rows = which == i
        x[rows] = box.sample(int(rows.sum()), rng)
    return x, formula, names


def satisfaction_rate(samples: np.ndarray, formula: Formula, var_order) -> float:
    """Exact fraction of rows satisfying ``formula``."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) == 0:
        return float("nan")
    return float(evaluate_many(formula, var_order, samples).mean())


# --------------------------------------------------------------------------
# structured sum

def enumerate_valid_assignments(base: int) -> list[tuple[int, int, int, int]]:
    return [tuple(int(v) for v in row) for row in valid_tuples(base)]


def symbol_centers(base: int, radius: float = 3.0) -> np.ndarray:
    """Distinct 2-D centers for ``base`` digit and ``max(2, base)`` carry symbols."""
    n = base + max(2, base)
    angles = 2 * np.pi * np.arange(n) / n
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


class SealedKey:
    """Ground-truth labels, readable only through :meth:`score`."""

    def __init__(self, labels: np.ndarray):
        self.__labels = np.array(labels, copy=True)
        self.__labels.setflags(write=False)

    def __len__(self):
        return len(self.__labels)

    def score(self, predicted: np.ndarray) -> tuple[float, float]:
        """(per-item label accuracy, whole-tuple accuracy)."""
        predicted = np.asarray(predicted)
        if predicted.shape != self.__labels.shape:
            raise ValueError("prediction shape does not match the key")
        hit = predicted == self.__labels
        return float(hit.mean()), float(hit.all(axis=1).mean())

    def check_identity(self, base: int) -> bool:
        i, j, c, u = self.__labels.T
        return bool(np.all(i + j == c * base + u))


def gen_struct_sum(n: int, base: int, rng: np.random.Generator, noise: float = 0.25
                   ) -> tuple[np.ndarray, SealedKey]:
    """``n`` unlabeled quadruples of 2-D points, shape (n, 4, 2)."""
    if base < 2:
        raise ConfigError("base must be at least 2")
    centers = symbol_centers(base)
    i = rng.integers(base, size=n)
    j = rng.integers(base, size=n)
    carry = (i + j >= base).astype(int)
    units = (i + j) % base
    labels = np.stack([i, j, carry, units], axis=1)
    symbols = labels.copy()
    symbols[:, 2] += base
    quads = centers[symbols] + noise * rng.standard_normal((n, 4, 2))
    return quads, SealedKey(labels)


# --------------------------------------------------------------------------
# hierarchy

def gen_hierarchy(n: int, groups: int, per_group: int, rng: np.random.Generator,
                  group_radius: float = 3.0, class_radius: float = 1.2,
                  noise: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Features, class labels and group labels; class ``c`` is in group
    ``c // per_group``."""
    if groups * per_group < 2:
        raise ConfigError("need at least two classes")
    ga = 2 * np.pi * np.arange(groups) / groups
    group_centers = group_radius * np.stack([np.cos(ga), np.sin(ga)], axis=1)
    ca = 2 * np.pi * np.arange(per_group) / per_group
    offsets = class_radius * np.stack([np.cos(ca), np.sin(ca)], axis=1)
    centers = (group_centers[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
    labels = rng.integers(groups * per_group, size=n)
    x = centers[labels] + noise * rng.standard_normal((n, 2))
    return x, labels, labels // per_group


def hierarchy_groups(groups: int, per_group: int) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(range(g * per_group, (g + 1) * per_group)) for g in range(groups))
