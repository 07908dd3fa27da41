import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import beta_baseline
from fairdecide.calibration import GLOBAL, CalibrationFunction
from fairdecide.errors import GroupCoverageError, MissingDeliverable, MissingSensitiveAttribute
from fairdecide.metrics import Criterion, FairnessConstraint
from fairdecide.optimizer import UtilityParams
from fairdecide.protocol import (
    GROUP_BASELINES,
    GROUP_CALIBRATION,
    STRATUM_BASELINES,
    DeliverableBundle,
    Mode,
    Performance,
    Provenance,
    TaskSpec,
    assemble_bundle,
    build_task_spec,
    optimize_from_bundle,
    roc_auc,
    validate_bundle,
)

U = UtilityParams(1, 1, 0.1)
PERF = Performance(accuracy=0.8, auc=0.85, calibration=())


def fn(scope):
    return CalibrationFunction(scope, (0.0, 0.5, 1.0), (0.2, 0.8), (10, 10))


def unconstrained_bundle():
    task = build_task_spec("unconstrained", "repaid within term")
    return assemble_bundle(task, "calibrated.csv", [fn(GLOBAL)], [beta_baseline(GLOBAL, 3, 3)], PERF)


def fairness_bundle(strata=False):
    task = build_task_spec("fairness", "repaid within term", groups=["a", "b"], strata=["x", "z"] if strata else None)
    baselines = [beta_baseline("a", 2, 5, count=600), beta_baseline("b", 5, 2, count=400)]
    if strata:
        baselines += [beta_baseline(g, 2, 3, stratum=s) for g in "ab" for s in "xz"]
    return assemble_bundle(
        task, "calibrated.csv", {"a": fn("a"), "b": fn("b")}, baselines, PERF, Provenance("estimation half", 1000)
    )


def test_task_spec_examples():
    plain = build_task_spec("unconstrained", "repaid within term")
    assert plain.groups is None and plain.mode is Mode.UNCONSTRAINED
    with pytest.raises(MissingSensitiveAttribute):
        build_task_spec("fairness", "repaid within term")
    assert build_task_spec("fairness", "repaid", groups=[0, 1]).groups == ("0", "1")


def test_assemble_examples():
    assert validate_bundle(unconstrained_bundle()).valid
    assert fairness_bundle().mode is Mode.FAIRNESS
    task = build_task_spec("fairness", "repaid", groups=["a", "b"])
    with pytest.raises(GroupCoverageError) as exc:
        assemble_bundle(task, "c.csv", [fn("a"), fn("b")], [beta_baseline("a", 2, 2)], PERF)
    assert exc.value.missing == [GROUP_BASELINES]
    with pytest.raises(GroupCoverageError):
        assemble_bundle(task, "c.csv", [fn("a")], [beta_baseline("a", 2, 2), beta_baseline("b", 2, 2)], PERF)


def test_validate_examples():
    report = validate_bundle(unconstrained_bundle(), FairnessConstraint(Criterion.EQUALIZED_ODDS, 0.01))
    assert not report.valid
    assert report.missing == [GROUP_CALIBRATION, GROUP_BASELINES]
    assert validate_bundle(fairness_bundle(), FairnessConstraint(Criterion.INDEPENDENCE, 0.01)).valid


def test_stratified_criterion_needs_stratum_baselines():
    c = FairnessConstraint(Criterion.CONDITIONAL_STATISTICAL_PARITY, 0.01)
    assert validate_bundle(fairness_bundle(), c).missing == [STRATUM_BASELINES]
    assert validate_bundle(fairness_bundle(strata=True), c).valid


def test_requirements_are_monotone():
    for bundle in (fairness_bundle(), fairness_bundle(strata=True)):
        for criterion in Criterion:
            if validate_bundle(bundle, FairnessConstraint(criterion, 0.1)).valid:
                assert validate_bundle(bundle).valid


def test_round_trip_through_json():
    for bundle in (unconstrained_bundle(), fairness_bundle(strata=True)):
        doc = json.loads(json.dumps(bundle.to_dict()))
        assert DeliverableBundle.from_dict(doc) == bundle
    spec = build_task_spec("fairness", "repaid", groups=["a", "b"], strata=["x"], population_note="applicants 2024")
    assert TaskSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


@given(
    st.text(min_size=1, max_size=30),
    st.lists(st.text(min_size=1, max_size=5), min_size=2, max_size=4, unique=True),
    st.text(max_size=30),
)
@settings(max_examples=100, deadline=None)
def test_task_spec_round_trip_property(target, groups, note):
    spec = build_task_spec("fairness", target, groups=groups, population_note=note)
    assert TaskSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_optimize_refuses_invalid_bundle_with_exact_missing_list():
    bundle = unconstrained_bundle()
    for criterion in Criterion:
        c = FairnessConstraint(criterion, 0.01)
        with pytest.raises(MissingDeliverable) as exc:
            optimize_from_bundle(bundle, U, c)
        assert exc.value.missing == validate_bundle(bundle, c).missing


def test_optimize_from_valid_bundles():
    free = optimize_from_bundle(unconstrained_bundle(), U)
    assert {e.group for e in free.rule.entries} == {GLOBAL}
    res = optimize_from_bundle(fairness_bundle(), U, FairnessConstraint(Criterion.INDEPENDENCE, 0.01))
    assert res.achieved_gaps["acceptance"] <= 0.01 + 1e-12


def test_roc_auc():
    assert roc_auc(np.array([0.1, 0.4, 0.35, 0.8]), np.array([0, 0, 1, 1])) == 0.75
    assert roc_auc(np.array([0.5, 0.5]), np.array([0, 1])) == 0.5
    assert roc_auc(np.array([0.5, 0.6]), np.array([1, 1])) is None
