"""pacroute: calibrate and stress-test threshold routers on synthetic worlds.

Build piecewise-uniform worlds on [0,1] with expert/fast labels and router
scores, calibrate a single-threshold router to a marginal risk guarantee,
and probe pointwise guarantees: Monte-Carlo audits, exact enumeration
oracles, and an adversarial local-relabeling demo showing that pointwise
guarantees force near-total deferral.
"""

__version__ = "0.1.0"

from .adversary import (
    PerturbationSpec,
    find_radius,
    make_perturbation,
    perturb,
    tv_product_bound,
    tv_single,
)
from .calibrate import (
    CalibrationOutcome,
    PacConfig,
    auto_threshold_grid,
    binomial_pvalue,
    empirical_exceedances,
    select_threshold,
    trivial_algorithm,
)
from .risk import (
    ALWAYS_DEFER,
    EXPERT,
    FAST,
    LossSpec,
    RouterThreshold,
    disagreement_region,
    exact_deferral_mass,
    exact_miscoverage,
    pointwise_risk,
    route,
)
from .simulate import (
    JOINT,
    AuditReport,
    DemoPreconditionError,
    DemoReport,
    EnumerationBudgetError,
    McConfig,
    enumerate_exact,
    mc_conditional_profile,
    mc_joint_risk,
    run_impossibility_demo,
    triviality_audit,
)
from .worlds import (
    CalibrationSet,
    Cell,
    CellWorld,
    WorldValidationError,
    cell_at,
    interval_mass,
    load_world,
    normalized_masses,
    sample_calibration,
    split_at,
    validate_world,
)

__all__ = [
    "__version__",
    "ALWAYS_DEFER",
    "EXPERT",
    "FAST",
    "JOINT",
    "AuditReport",
    "CalibrationOutcome",
    "CalibrationSet",
    "Cell",
    "CellWorld",
    "DemoPreconditionError",
    "DemoReport",
    "EnumerationBudgetError",
    "LossSpec",
    "McConfig",
    "PacConfig",
    "PerturbationSpec",
    "RouterThreshold",
    "WorldValidationError",
    "auto_threshold_grid",
    "binomial_pvalue",
    "cell_at",
    "disagreement_region",
    "empirical_exceedances",
    "enumerate_exact",
    "exact_deferral_mass",
    "exact_miscoverage",
    "find_radius",
    "interval_mass",
    "load_world",
    "make_perturbation",
    "mc_conditional_profile",
    "mc_joint_risk",
    "normalized_masses",
    "perturb",
    "pointwise_risk",
    "route",
    "run_impossibility_demo",
    "sample_calibration",
    "select_threshold",
    "split_at",
    "triviality_audit",
    "trivial_algorithm",
    "tv_product_bound",
    "tv_single",
    "validate_world",
]
