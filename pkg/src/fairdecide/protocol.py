"""Task specification, deliverable bundle and the sufficiency check between them.

The decision-maker sends a :class:`TaskSpec`; the prediction-modeler answers
with a :class:`DeliverableBundle`. Optimizing under a fairness constraint
needs group-specific calibration functions and baseline distributions on top
of what plain expected-utility maximization needs; :func:`validate_bundle`
names whatever is missing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import io
from .baseline import BaselineDistribution
from .calibration import GLOBAL, CalibrationFunction, CalibrationReport, calibration_error
from .errors import GroupCoverageError, MissingDeliverable, MissingSensitiveAttribute, SchemaError
from .instances import Columns, LabeledInstance
from .metrics import Criterion, FairnessConstraint
from .optimizer import (
    DEFAULT_RESOLUTION,
    OptimizationResult,
    UtilityParams,
    optimize_constrained,
    optimize_unconstrained,
)

BUNDLE_VERSION = 1

PREDICTION_MODEL = "prediction model"
PERFORMANCE = "prediction model performance"
CALIBRATION = "calibration function"
GROUP_CALIBRATION = "group-specific calibration functions"
GROUP_BASELINES = "group-specific baseline distributions"
STRATUM_BASELINES = "stratum-specific baseline distributions"


class Mode(str, enum.Enum):
    UNCONSTRAINED = "unconstrained"
    FAIRNESS = "fairness"


@dataclass(frozen=True)
class TaskSpec:
    mode: Mode
    target_definition: str
    target_encoding: str = "Y=1 when the target event occurs, Y=0 otherwise"
    groups: tuple[str, ...] | None = None
    strata: tuple[str, ...] | None = None
    population_note: str = ""
    version: int = BUNDLE_VERSION
    extensions: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.groups is not None:
            object.__setattr__(self, "groups", tuple(self.groups))
        if self.strata is not None:
            object.__setattr__(self, "strata", tuple(self.strata))
        if self.mode is Mode.FAIRNESS and (self.groups is None or len(set(self.groups)) < 2):
            raise MissingSensitiveAttribute(
                "fairness mode needs the sensitive attribute with at least two groups"
            )

    def to_dict(self) -> dict:
        return {
            "kind": "task_spec",
            "version": self.version,
            "mode": self.mode.value,
            "target_definition": self.target_definition,
            "target_encoding": self.target_encoding,
            "groups": None if self.groups is None else list(self.groups),
            "strata": None if self.strata is None else list(self.strata),
            "population_note": self.population_note,
            "extensions": dict(self.extensions),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TaskSpec":
        _check_kind(doc, "task_spec")
        try:
            return cls(
                mode=Mode(doc["mode"]),
                target_definition=doc["target_definition"],
                target_encoding=doc.get("target_encoding", cls.target_encoding),
                groups=None if doc.get("groups") is None else tuple(doc["groups"]),
                strata=None if doc.get("strata") is None else tuple(doc["strata"]),
                population_note=doc.get("population_note", ""),
                version=int(doc.get("version", BUNDLE_VERSION)),
                extensions=dict(doc.get("extensions") or {}),
            )
        except KeyError as exc:
            raise SchemaError(f"task spec: missing field {exc.args[0]!r}") from None
        except ValueError as exc:
            raise SchemaError(f"task spec: {exc}") from None


def build_task_spec(mode, target_definition: str, groups=None, strata=None, population_note="") -> TaskSpec:
    return TaskSpec(
        mode=Mode(mode),
        target_definition=target_definition,
        groups=None if groups is None else tuple(str(g) for g in groups),
        strata=None if strata is None else tuple(str(s) for s in strata),
        population_note=population_note,
    )


@dataclass(frozen=True)
class Performance:
    accuracy: float
    auc: float | None
    calibration: tuple[CalibrationReport, ...]
    threshold: float = 0.5

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "auc": self.auc,
            "threshold": self.threshold,
            "calibration": [io.calibration_report_to_dict(r) for r in self.calibration],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Performance":
        return cls(
            accuracy=float(doc["accuracy"]),
            auc=None if doc.get("auc") is None else float(doc["auc"]),
            calibration=tuple(io.calibration_report_from_dict(r) for r in doc.get("calibration", [])),
            threshold=float(doc.get("threshold", 0.5)),
        )


@dataclass(frozen=True)
class Provenance:
    estimation_set: str
    count: int
    created: str | None = None
    generator: str | None = None

    def to_dict(self) -> dict:
        return {
            "estimation_set": self.estimation_set,
            "count": self.count,
            "created": self.created,
            "generator": self.generator,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Provenance":
        return cls(doc["estimation_set"], int(doc["count"]), doc.get("created"), doc.get("generator"))


@dataclass(frozen=True)
class DeliverableBundle:
    mode: Mode
    scored_data_ref: str | None
    performance: Performance | None
    calibration: tuple[CalibrationFunction, ...]
    baselines: tuple[BaselineDistribution, ...] = ()
    groups: tuple[str, ...] | None = None
    strata: tuple[str, ...] | None = None
    provenance: Provenance | None = None
    version: int = BUNDLE_VERSION
    extensions: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "calibration", tuple(self.calibration))
        object.__setattr__(self, "baselines", tuple(self.baselines))
        if self.groups is not None:
            object.__setattr__(self, "groups", tuple(self.groups))
        if self.strata is not None:
            object.__setattr__(self, "strata", tuple(self.strata))

    def calibration_for(self, scope: str) -> CalibrationFunction | None:
        return next((f for f in self.calibration if f.group_scope == scope), None)

    def calibration_map(self) -> dict[str, CalibrationFunction]:
        return {f.group_scope: f for f in self.calibration}

    def group_baselines(self) -> list[BaselineDistribution]:
        return [b for b in self.baselines if b.stratum is None and b.group != GLOBAL]

    def stratum_baselines(self) -> list[BaselineDistribution]:
        return [b for b in self.baselines if b.stratum is not None]

    def to_dict(self) -> dict:
        return {
            "kind": "deliverable_bundle",
            "version": self.version,
            "bundle_mode": self.mode.value,
            "scored_data_ref": self.scored_data_ref,
            "performance": None if self.performance is None else self.performance.to_dict(),
            "calibration": [io.calibration_to_dict(f) for f in self.calibration],
            "baselines": [io.baseline_to_dict(b) for b in self.baselines],
            "groups": None if self.groups is None else list(self.groups),
            "strata": None if self.strata is None else list(self.strata),
            "provenance": None if self.provenance is None else self.provenance.to_dict(),
            "extensions": dict(self.extensions),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DeliverableBundle":
        _check_kind(doc, "deliverable_bundle")
        try:
            return cls(
                mode=Mode(doc["bundle_mode"]),
                scored_data_ref=doc.get("scored_data_ref"),
                performance=None if doc.get("performance") is None else Performance.from_dict(doc["performance"]),
                calibration=tuple(io.calibration_from_dict(f) for f in doc.get("calibration", [])),
                baselines=tuple(io.baseline_from_dict(b) for b in doc.get("baselines", [])),
                groups=None if doc.get("groups") is None else tuple(doc["groups"]),
                strata=None if doc.get("strata") is None else tuple(doc["strata"]),
                provenance=None if doc.get("provenance") is None else Provenance.from_dict(doc["provenance"]),
                version=int(doc.get("version", BUNDLE_VERSION)),
                extensions=dict(doc.get("extensions") or {}),
            )
        except KeyError as exc:
            raise SchemaError(f"deliverable bundle: missing field {exc.args[0]!r}") from None
        except ValueError as exc:
            raise SchemaError(f"deliverable bundle: {exc}") from None


def _check_kind(doc: dict, kind: str):
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise SchemaError(f"expected a {kind} document")


@dataclass
class ValidationReport:
    missing: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.missing


# --------------------------------------------------------------------------
# Performance


def roc_auc(p: np.ndarray, y: np.ndarray) -> float | None:
    """Rank-based area under the ROC curve (ties count one half)."""
    pos = int(y.sum())
    neg = y.size - pos
    if pos == 0 or neg == 0:
        return None
    values, inverse, counts = np.unique(p, return_inverse=True, return_counts=True)
    # average rank of each distinct value, 1-based
    upper = np.cumsum(counts)
    avg = upper - (counts - 1) / 2.0
    ranks = avg[inverse]
    return float((ranks[y == 1].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


def performance_report(
    instances: Sequence[LabeledInstance], functions: Mapping[str, CalibrationFunction], threshold=0.5
) -> Performance:
    """Accuracy at ``threshold`` and AUC on calibrated_p, ECE per function."""
    labeled = [i for i in instances if i.outcome is not None and i.calibrated_p is not None]
    if not labeled:
        raise SchemaError("performance needs labeled, calibrated instances")
    cols = Columns(labeled)
    pred = (cols.p_hat >= threshold).astype(float)
    accuracy = float((pred == cols.outcome).mean())
    reports = []
    for scope in sorted(functions):
        scoped = labeled if scope == GLOBAL else [i for i in labeled if i.group == scope]
        if scoped:
            reports.append(calibration_error(functions[scope], scoped))
    return Performance(accuracy, roc_auc(cols.p_hat, cols.outcome), tuple(reports), threshold)


# --------------------------------------------------------------------------
# Bundle assembly and validation


def assemble_bundle(
    task: TaskSpec,
    scored_data_ref: str,
    calibrations: Sequence[CalibrationFunction] | Mapping[str, CalibrationFunction],
    baselines: Sequence[BaselineDistribution] | None = None,
    performance: Performance | None = None,
    provenance: Provenance | None = None,
) -> DeliverableBundle:
    fns = tuple(calibrations.values()) if isinstance(calibrations, Mapping) else tuple(calibrations)
    baselines = tuple(baselines or ())
    if task.mode is Mode.FAIRNESS:
        scopes = {f.group_scope for f in fns}
        have = {b.group for b in baselines if b.stratum is None}
        for g in task.groups:
            if g not in scopes:
                raise GroupCoverageError([GROUP_CALIBRATION], f"group {g!r} has no calibration function")
            if g not in have:
                raise GroupCoverageError([GROUP_BASELINES], f"group {g!r} has no baseline distribution")
    elif not fns:
        raise GroupCoverageError([CALIBRATION], "no calibration function supplied")
    return DeliverableBundle(
        mode=task.mode,
        scored_data_ref=scored_data_ref,
        performance=performance,
        calibration=fns,
        baselines=baselines,
        groups=task.groups,
        strata=task.strata,
        provenance=provenance,
    )


def validate_bundle(
    bundle: DeliverableBundle, intended: FairnessConstraint | None = None
) -> ValidationReport:
    """List the deliverables the bundle lacks for the intended optimization."""
    report = ValidationReport()
    if not bundle.scored_data_ref:
        report.missing.append(PREDICTION_MODEL)
    if bundle.performance is None:
        report.missing.append(PERFORMANCE)
    if not bundle.calibration:
        report.missing.append(CALIBRATION)
    if intended is None:
        return report

    groups = bundle.groups or ()
    if len(groups) < 2:
        report.warnings.append("bundle declares fewer than two groups")
    scopes = {f.group_scope for f in bundle.calibration}
    if len(groups) < 2 or any(g not in scopes for g in groups):
        report.missing.append(GROUP_CALIBRATION)
    have = {b.group for b in bundle.group_baselines()}
    if len(groups) < 2 or any(g not in have for g in groups):
        report.missing.append(GROUP_BASELINES)
    if intended.criterion is Criterion.CONDITIONAL_STATISTICAL_PARITY:
        cells = {(b.group, b.stratum) for b in bundle.stratum_baselines()}
        strata = intended.strata or bundle.strata or tuple(sorted({s for _, s in cells}))
        if not strata or any((g, s) not in cells for g in groups for s in strata):
            report.missing.append(STRATUM_BASELINES)
    if bundle.mode is Mode.UNCONSTRAINED and report.valid:
        report.warnings.append("bundle was assembled in unconstrained mode")
    return report


def optimize_from_bundle(
    bundle: DeliverableBundle,
    u: UtilityParams,
    constraint: FairnessConstraint | None = None,
    resolution: float = DEFAULT_RESOLUTION,
    weights=None,
) -> OptimizationResult:
    """Validate first, then optimize on the bundle's baselines."""
    report = validate_bundle(bundle, constraint)
    if not report.valid:
        raise MissingDeliverable(report.missing)
    if constraint is not None:
        baselines = bundle.group_baselines() + bundle.stratum_baselines()
        return optimize_constrained(baselines, weights, u, constraint, resolution)
    baselines = bundle.group_baselines() or [b for b in bundle.baselines if b.group == GLOBAL]
    if not baselines:
        raise MissingDeliverable([GROUP_BASELINES])
    return optimize_unconstrained(baselines, weights, u)
