"""Threshold router, loss specs, and exact population risk quantities.

The router sends an input to the expert when its score strictly exceeds the
threshold; ties go to the fast model. ``ALWAYS_DEFER`` is a distinguished
threshold that routes everything to the expert (kept as a sentinel rather
than -inf so serialized reports stay finite).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .worlds import CellWorld, cell_at

__all__ = [
    "LossSpec",
    "RouterThreshold",
    "ALWAYS_DEFER",
    "EXPERT",
    "FAST",
    "route",
    "pointwise_risk",
    "disagreement_region",
    "exact_miscoverage",
    "exact_deferral_mass",
    "cell_exceedance_flags",
    "check_loss_compatible",
    "loss_from_dict",
    "loss_to_dict",
]

EXPERT = "expert"
FAST = "fast"


class _AlwaysDefer:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ALWAYS_DEFER"


ALWAYS_DEFER = _AlwaysDefer()

RouterThreshold = Union[float, _AlwaysDefer]


@dataclass(frozen=True)
class LossSpec:
    """Loss on label pairs plus the tolerance that defines "bad" fast outputs.

    ``kind="zero_one"`` is the mismatch indicator. ``kind="table"`` looks up
    ``table[prediction][truth]``; the diagonal must be zero. Exceedance is
    strict: a pair is bad when loss > epsilon.
    """

    kind: str
    epsilon: float
    table: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if self.kind not in ("zero_one", "table"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon!r}")
        if self.kind == "zero_one":
            if self.table is not None:
                raise ValueError("zero_one loss takes no table")
            if self.epsilon >= 1.0:
                raise ValueError(
                    "zero_one loss with epsilon >= 1 can never be exceeded"
                )
        else:
            if self.table is None:
                raise ValueError("table loss requires a table")
            k = len(self.table)
            for i, row in enumerate(self.table):
                if len(row) != k:
                    raise ValueError(f"loss table row {i} is not length {k}")
                if row[i] != 0.0:
                    raise ValueError(f"loss table diagonal [{i}][{i}] must be 0")
                for j, v in enumerate(row):
                    if v < 0:
                        raise ValueError(f"loss table [{i}][{j}] must be >= 0")

    def value(self, prediction: int, truth: int) -> float:
        """Loss of predicting ``prediction`` when the expert says ``truth``."""
        if self.kind == "zero_one":
            return 1.0 if prediction != truth else 0.0
        return float(self.table[prediction][truth])

    def exceeds(self, prediction: int, truth: int) -> bool:
        return self.value(prediction, truth) > self.epsilon


def route(r: RouterThreshold, score: float) -> str:
    """EXPERT when score > threshold (or always-defer); FAST otherwise."""
    if r is ALWAYS_DEFER or score > r:
        return EXPERT
    return FAST


def pointwise_risk(w: CellWorld, loss: LossSpec, r: RouterThreshold, x: float) -> float:
    """Loss incurred at x: zero when the expert handles it, else fast-vs-expert loss."""
    check_loss_compatible(w, loss)
    c = cell_at(w, x)
    if route(r, c.score) == EXPERT:
        return 0.0
    return loss.value(c.fast_label, c.expert_label)


def check_loss_compatible(w: CellWorld, loss: LossSpec) -> None:
    """A table loss must cover every label the world can produce."""
    if loss.kind == "table" and len(loss.table) < w.alphabet_size:
        raise ValueError(
            f"loss table is {len(loss.table)}x{len(loss.table)} but the world "
            f"uses {w.alphabet_size} labels"
        )


def cell_exceedance_flags(w: CellWorld, loss: LossSpec) -> np.ndarray:
    """Per-cell flag: does the fast model's loss against the expert exceed epsilon?"""
    check_loss_compatible(w, loss)
    return np.array(
        [loss.exceeds(c.fast_label, c.expert_label) for c in w.cells], dtype=bool
    )


class DisagreementRegion(NamedTuple):
    cell_indices: tuple[int, ...]
    mass: float


def disagreement_region(w: CellWorld, loss: LossSpec) -> DisagreementRegion:
    """Cells where the fast model is bad (loss > epsilon), with their total mass."""
    flags = cell_exceedance_flags(w, loss)
    idx = tuple(int(i) for i in np.flatnonzero(flags))
    mass = float(np.sum(w.masses[flags])) if idx else 0.0
    return DisagreementRegion(cell_indices=idx, mass=mass)


def exact_miscoverage(w: CellWorld, loss: LossSpec, r: RouterThreshold) -> float:
    """Exact P(risk > epsilon) for a fixed threshold: mass routed fast AND bad."""
    if r is ALWAYS_DEFER:
        return 0.0
    sel = (w.scores <= r) & cell_exceedance_flags(w, loss)
    return float(np.sum(w.masses[sel]))


def exact_deferral_mass(w: CellWorld, r: RouterThreshold) -> float:
    """Exact probability the router defers to the expert."""
    if r is ALWAYS_DEFER:
        return 1.0
    return float(np.sum(w.masses[w.scores > r]))


def loss_from_dict(d: dict) -> LossSpec:
    table = d.get("table")
    return LossSpec(
        kind=d["kind"],
        epsilon=float(d["epsilon"]),
        table=tuple(tuple(float(v) for v in row) for row in table)
        if table is not None
        else None,
    )


def loss_to_dict(loss: LossSpec) -> dict:
    out = {"kind": loss.kind, "epsilon": loss.epsilon}
    if loss.table is not None:
        out["table"] = [list(row) for row in loss.table]
    return out
