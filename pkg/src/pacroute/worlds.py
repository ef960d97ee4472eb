"""Synthetic worlds: piecewise-uniform joint distributions on [0,1] x labels.

A world is an ordered list of cells tiling [0,1]. Within a cell, inputs are
uniform with total probability ``mass``, and the expert label, fast label and
router score are constant. Cell-constant functions keep every population
quantity (interval masses, miscoverage, deferral) exactly computable, which
is what the enumeration oracles rely on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "Cell",
    "CellWorld",
    "CalibrationSet",
    "WorldValidationError",
    "validate_world",
    "cell_at",
    "cell_index_at",
    "interval_mass",
    "split_at",
    "sample_calibration",
    "normalized_masses",
    "world_from_dict",
    "world_to_dict",
    "load_world",
]

MASS_TOL = 1e-12


class WorldValidationError(ValueError):
    """Raised by loaders when a world fails validation.

    Carries the full violation list so callers can report every problem
    at once.
    """

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(violations))


@dataclass(frozen=True)
class Cell:
    """One tile of the input space: uniform on [left, right) with the given mass.

    Labels and score are constant on the cell.
    """

    left: float
    right: float
    mass: float
    expert_label: int
    fast_label: int
    score: float


@dataclass(frozen=True)
class CellWorld:
    """A joint distribution over ([0,1], labels), as contiguous cells.

    Immutable after construction; derived arrays are cached and shared.
    Use :func:`validate_world` to check invariants (tiling, unit mass,
    label range).
    """

    cells: tuple[Cell, ...]
    alphabet_size: int

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def lefts(self) -> np.ndarray:
        return np.array([c.left for c in self.cells])

    @cached_property
    def rights(self) -> np.ndarray:
        return np.array([c.right for c in self.cells])

    @cached_property
    def masses(self) -> np.ndarray:
        return np.array([c.mass for c in self.cells])

    @cached_property
    def scores(self) -> np.ndarray:
        return np.array([c.score for c in self.cells])

    @cached_property
    def expert_labels(self) -> np.ndarray:
        return np.array([c.expert_label for c in self.cells], dtype=np.int64)

    @cached_property
    def fast_labels(self) -> np.ndarray:
        return np.array([c.fast_label for c in self.cells], dtype=np.int64)

    @cached_property
    def mass_cdf(self) -> np.ndarray:
        return np.cumsum(self.masses)


@dataclass(frozen=True)
class CalibrationSet:
    """Labeled calibration draws (x_i, y_i), y_i = expert label at x_i."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        if self.xs.shape != self.ys.shape or self.xs.ndim != 1:
            raise ValueError("xs and ys must be 1-d arrays of equal length")

    def __len__(self) -> int:
        return int(self.xs.shape[0])


def validate_world(w: CellWorld) -> list[str]:
    """Return every invariant violation; an empty list means the world is valid."""
    out: list[str] = []
    if w.alphabet_size < 2:
        out.append(f"alphabet_size must be >= 2, got {w.alphabet_size}")
    if not w.cells:
        out.append("world has no cells")
        return out
    for i, c in enumerate(w.cells):
        if not c.left < c.right:
            out.append(f"cell {i}: left {c.left!r} must be < right {c.right!r}")
        if not c.mass >= 0.0:
            out.append(f"cell {i}: mass {c.mass!r} must be >= 0")
        if not np.isfinite(c.score):
            out.append(f"cell {i}: score {c.score!r} must be finite")
        for name, label in (("expert", c.expert_label), ("fast", c.fast_label)):
            if not (isinstance(label, (int, np.integer)) and 0 <= label < w.alphabet_size):
                out.append(
                    f"cell {i}: {name} label {label!r} outside alphabet "
                    f"[0, {w.alphabet_size})"
                )
    if w.cells[0].left != 0.0:
        out.append(f"first cell must start at 0, got {w.cells[0].left!r}")
    if w.cells[-1].right != 1.0:
        out.append(f"last cell must end at 1, got {w.cells[-1].right!r}")
    for i in range(len(w.cells) - 1):
        a, b = w.cells[i].right, w.cells[i + 1].left
        if a != b:
            out.append(f"gap or overlap at cell {i}/{i + 1}: {a!r} != {b!r}")
    total = float(np.sum(w.masses))
    if abs(total - 1.0) > MASS_TOL:
        out.append(f"total mass {total!r} differs from 1 by more than {MASS_TOL}")
    return out


def cell_index_at(w: CellWorld, x: float) -> int:
    """Index of the cell owning x. Cells are [left, right); x=1 belongs to the last."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0,1], got {x!r}")
    if x == 1.0:
        return len(w.cells) - 1
    return int(np.searchsorted(w.lefts, x, side="right")) - 1


def cell_at(w: CellWorld, x: float) -> Cell:
    """The unique cell with left <= x < right (x=1 owned by the last cell)."""
    return w.cells[cell_index_at(w, x)]


def interval_mass(w: CellWorld, a: float, b: float) -> float:
    """Exact probability of the interval (a, b) under the world's X-marginal."""
    if a > b:
        raise ValueError(f"need a <= b, got a={a!r} b={b!r}")
    total = 0.0
    for c in w.cells:
        overlap = min(b, c.right) - max(a, c.left)
        if overlap > 0.0:
            total += c.mass * (overlap / (c.right - c.left))
    # summation noise can overshoot 1 by an ulp on the full interval
    return min(total, 1.0)


def split_at(w: CellWorld, points) -> CellWorld:
    """Refine cell boundaries to include ``points`` without changing the distribution.

    Each affected cell is cut into pieces whose masses are proportional to
    length; the last piece takes the exact remainder so total mass is
    conserved bit-for-bit. Points already on a boundary are no-ops.
    """
    pts = sorted({float(p) for p in points if 0.0 < p < 1.0})
    if not pts:
        return w
    new_cells: list[Cell] = []
    for c in w.cells:
        inner = [p for p in pts if c.left < p < c.right]
        if not inner:
            new_cells.append(c)
            continue
        cuts = [c.left] + inner + [c.right]
        length = c.right - c.left
        assigned = 0.0
        for j in range(len(cuts) - 1):
            lo, hi = cuts[j], cuts[j + 1]
            if j < len(cuts) - 2:
                m = c.mass * ((hi - lo) / length)
                assigned += m
            else:
                m = c.mass - assigned
            new_cells.append(
                Cell(lo, hi, m, c.expert_label, c.fast_label, c.score)
            )
    return CellWorld(cells=tuple(new_cells), alphabet_size=w.alphabet_size)


def sample_calibration(w: CellWorld, n: int, seed) -> CalibrationSet:
    """Draw n labeled points: cell by mass, position uniform in the cell.

    ``seed`` is anything ``numpy.random.default_rng`` accepts (int or
    SeedSequence). Labels are the owning cell's expert label, so they match
    ``cell_at`` exactly.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    u = rng.random(n)
    v = rng.random(n)
    cells = np.minimum(
        np.searchsorted(w.mass_cdf, u, side="right"), len(w.cells) - 1
    )
    lefts = w.lefts[cells]
    rights = w.rights[cells]
    xs = lefts + v * (rights - lefts)
    # rounding can push x onto the next cell's left edge; pull it back inside
    hit = xs >= rights
    if np.any(hit):
        xs[hit] = np.nextafter(rights[hit], lefts[hit])
    ys = w.expert_labels[cells]
    return CalibrationSet(xs=xs, ys=ys)


def normalized_masses(weights) -> list[float]:
    """Scale nonnegative weights to masses summing to exactly 1.0.

    The largest entry absorbs the float residual, keeping every mass
    nonnegative.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty 1-d sequence")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    s = float(np.sum(w))
    if s <= 0:
        raise ValueError("weights must have positive sum")
    m = w / s
    k = int(np.argmax(m))
    m[k] += 1.0 - float(np.sum(m))
    return [float(x) for x in m]


def world_from_dict(d: dict) -> CellWorld:
    """Build a world from its JSON form, validating it; raises WorldValidationError."""
    try:
        cells = tuple(
            Cell(
                left=float(c["left"]),
                right=float(c["right"]),
                mass=float(c["mass"]),
                expert_label=int(c["expert"]),
                fast_label=int(c["fast"]),
                score=float(c["score"]),
            )
            for c in d["cells"]
        )
        w = CellWorld(cells=cells, alphabet_size=int(d["alphabet_size"]))
    except (KeyError, TypeError, ValueError) as e:
        raise WorldValidationError([f"malformed world object: {e}"]) from e
    violations = validate_world(w)
    if violations:
        raise WorldValidationError(violations)
    return w


def world_to_dict(w: CellWorld) -> dict:
    return {
        "alphabet_size": w.alphabet_size,
        "cells": [
            {
                "left": c.left,
                "right": c.right,
                "mass": c.mass,
                "expert": c.expert_label,
                "fast": c.fast_label,
                "score": c.score,
            }
            for c in w.cells
        ],
    }


def load_world(path) -> CellWorld:
    with open(path, encoding="utf-8") as f:
        return world_from_dict(json.load(f))
