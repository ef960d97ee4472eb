"""Locally perturbed worlds that calibration data cannot distinguish.

Around a chosen point we shrink an interval until its mass is below
eta / (2n), then swap the expert label inside it for one the fast model gets
badly wrong. The X-marginal is untouched, so the perturbed world differs
from the base only on that sliver: a single draw differs with probability
equal to the sliver's mass, and the n-fold product law by at most 2n times
that, which stays below eta by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

from .risk import LossSpec
from .worlds import Cell, CellWorld, cell_at, interval_mass, split_at

__all__ = [
    "PerturbationSpec",
    "find_radius",
    "choose_adversarial_label",
    "make_perturbation",
    "perturb",
    "tv_single",
    "tv_product_bound",
]

_INITIAL_RADIUS = 0.1


@dataclass(frozen=True)
class PerturbationSpec:
    """A solved perturbation: where, how wide, how heavy, and the swapped label.

    ``ball_mass`` is the exact base-world mass of (x_star - radius,
    x_star + radius) clipped to [0,1], and is strictly below eta / (2n).
    """

    x_star: float
    eta: float
    n: int
    radius: float
    ball_mass: float
    adversarial_label: int

    def to_dict(self) -> dict:
        return {
            "x_star": self.x_star,
            "eta": self.eta,
            "n": self.n,
            "radius": self.radius,
            "ball_mass": self.ball_mass,
            "adversarial_label": self.adversarial_label,
        }


def _ball_mass(w: CellWorld, x_star: float, radius: float) -> float:
    # clipping at the domain edge only shrinks the ball, never the bound
    return interval_mass(w, max(0.0, x_star - radius), min(1.0, x_star + radius))


def find_radius(w: CellWorld, x_star: float, eta: float, n: int) -> tuple[float, float]:
    """Halve the radius from 0.1 until the ball mass drops strictly below eta/(2n).

    Returns (radius, ball_mass). Terminates for every valid world: the
    density is bounded, so the mass of a shrinking interval goes to zero.
    """
    if not 0.0 <= x_star <= 1.0:
        raise ValueError(f"x_star must be in [0,1], got {x_star!r}")
    if eta <= 0.0:
        raise ValueError(f"eta must be > 0, got {eta!r}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    target = eta / (2.0 * n)
    radius = _INITIAL_RADIUS
    mass = _ball_mass(w, x_star, radius)
    while mass >= target:
        radius /= 2.0
        if radius == 0.0:
            raise RuntimeError("radius underflowed before the mass target was met")
        mass = _ball_mass(w, x_star, radius)
    return radius, mass


def choose_adversarial_label(w: CellWorld, loss: LossSpec, x_star: float) -> int:
    """A label the fast model at x_star gets wrong by more than epsilon.

    Zero-one loss: the next label cyclically (any mismatch has loss 1).
    Table loss: the smallest label whose entry exceeds epsilon.
    """
    fast = cell_at(w, x_star).fast_label
    if loss.kind == "zero_one":
        return (fast + 1) % w.alphabet_size
    for y in range(w.alphabet_size):
        if loss.exceeds(fast, y):
            return y
    raise ValueError(
        f"no label has loss > {loss.epsilon!r} against fast label {fast} at "
        f"x={x_star!r}; the perturbation cannot be built"
    )


def make_perturbation(
    w: CellWorld, loss: LossSpec, x_star: float, eta: float, n: int
) -> PerturbationSpec:
    """Solve the radius and pick the swapped label; the result satisfies all bounds."""
    radius, mass = find_radius(w, x_star, eta, n)
    label = choose_adversarial_label(w, loss, x_star)
    return PerturbationSpec(
        x_star=x_star,
        eta=eta,
        n=n,
        radius=radius,
        ball_mass=mass,
        adversarial_label=label,
    )


def perturb(w: CellWorld, loss: LossSpec, spec: PerturbationSpec) -> CellWorld:
    """Swap the expert label to the adversarial one inside the solved ball.

    Masses, scores and fast labels are untouched, and cells outside the ball
    are carried over unchanged, so the X-marginal is identical to the base
    world's.
    """
    recomputed = _ball_mass(w, spec.x_star, spec.radius)
    if recomputed != spec.ball_mass:
        raise ValueError(
            f"spec inconsistent with world: ball mass recomputes to "
            f"{recomputed!r}, spec says {spec.ball_mass!r}"
        )
    if not spec.ball_mass < spec.eta / (2.0 * spec.n):
        raise ValueError(
            f"ball mass {spec.ball_mass!r} is not strictly below "
            f"eta/(2n) = {spec.eta / (2.0 * spec.n)!r}"
        )
    if not 0 <= spec.adversarial_label < w.alphabet_size:
        raise ValueError(f"adversarial label {spec.adversarial_label} outside alphabet")
    fast_at_star = cell_at(w, spec.x_star).fast_label
    if not loss.exceeds(fast_at_star, spec.adversarial_label):
        raise ValueError(
            "adversarial label does not make the fast model bad at x_star "
            "under this loss"
        )
    lo = spec.x_star - spec.radius
    hi = spec.x_star + spec.radius
    base = split_at(w, [p for p in (lo, hi) if 0.0 < p < 1.0])
    cells = tuple(
        Cell(c.left, c.right, c.mass, spec.adversarial_label, c.fast_label, c.score)
        if c.left >= lo and c.right <= hi
        else c
        for c in base.cells
    )
    return CellWorld(cells=cells, alphabet_size=base.alphabet_size)


def tv_single(w: CellWorld, w2: CellWorld) -> float:
    """Exact total variation between one (X, expert label) draw from each world.

    Requires identical cell boundaries and masses (refine with
    :func:`pacroute.worlds.split_at` first). Labels are deterministic given
    the cell, so conditionals are either identical or disjoint and the TV is
    the mass where expert labels differ.
    """
    if len(w.cells) != len(w2.cells):
        raise ValueError("worlds have different cell counts; split_at first")
    total = 0.0
    for i, (a, b) in enumerate(zip(w.cells, w2.cells)):
        if a.left != b.left or a.right != b.right:
            raise ValueError(f"cell {i} boundaries differ: {a.left, a.right} vs {b.left, b.right}")
        if a.mass != b.mass:
            raise ValueError(f"cell {i} masses differ: {a.mass!r} vs {b.mass!r}")
        if a.expert_label != b.expert_label:
            total += a.mass
    return total


def tv_product_bound(ball_mass: float, n: int) -> float:
    """Bound on the n-sample total variation: 2 * n * ball_mass, clamped to [0,1]."""
    if not 0.0 <= ball_mass <= 1.0:
        raise ValueError(f"ball_mass must be in [0,1], got {ball_mass!r}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return min(1.0, 2.0 * n * ball_mass)
