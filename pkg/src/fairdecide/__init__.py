"""Fairness-constrained decision rules built on calibrated prediction scores."""

from .baseline import BaselineDistribution, Direction, estimate_baseline, expected_rate_curves
from .calibration import (
    GLOBAL,
    CalibrationFunction,
    CalibrationReport,
    apply_calibration,
    calibrate_instances,
    calibration_error,
    fit_calibration,
)
from .instances import LabeledInstance
from .metrics import (
    Criterion,
    FairnessConstraint,
    GapReport,
    acceptance_rates,
    audit,
    conditional_parity_gap,
    independence_gap,
    separation_gaps,
    sufficiency_gaps,
)
from .optimizer import (
    DecisionRule,
    GroupRule,
    OptimizationResult,
    UtilityParams,
    apply_rule,
    evaluate_utility,
    optimal_unconstrained_threshold,
    optimize_constrained,
    optimize_unconstrained,
)
from .protocol import (
    DeliverableBundle,
    TaskSpec,
    ValidationReport,
    assemble_bundle,
    build_task_spec,
    validate_bundle,
)

__version__ = "0.1.0"
