"""Group-fairness gaps computed from decision records.

Every gap is the largest pairwise absolute difference of a conditional
probability across groups. A rate whose conditioning set is empty is
undefined: it is left out of the maximum and recorded in the report, never
replaced by zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyGroup, MissingDecision, MissingOutcome, MissingStratum, SchemaError
from .instances import Columns, LabeledInstance


class Criterion(str, enum.Enum):
    INDEPENDENCE = "independence"
    CONDITIONAL_STATISTICAL_PARITY = "conditional_statistical_parity"
    EQUAL_OPPORTUNITY = "equal_opportunity"
    PREDICTIVE_EQUALITY = "predictive_equality"
    EQUALIZED_ODDS = "equalized_odds"
    PREDICTIVE_PARITY = "predictive_parity"
    FOR_PARITY = "for_parity"
    SUFFICIENCY = "sufficiency"

    @classmethod
    def parse(cls, text: str) -> "Criterion":
        key = text.strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {
            "statistical_parity": cls.INDEPENDENCE,
            "demographic_parity": cls.INDEPENDENCE,
            "separation": cls.EQUALIZED_ODDS,
            "ppv_parity": cls.PREDICTIVE_PARITY,
            "conditional_parity": cls.CONDITIONAL_STATISTICAL_PARITY,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise SchemaError(f"unknown fairness criterion {text!r}") from None


# Which rate gaps each criterion constrains.
COMPONENTS: dict[Criterion, tuple[str, ...]] = {
    Criterion.INDEPENDENCE: ("acceptance",),
    Criterion.CONDITIONAL_STATISTICAL_PARITY: ("conditional_acceptance",),
    Criterion.EQUAL_OPPORTUNITY: ("tpr",),
    Criterion.PREDICTIVE_EQUALITY: ("fpr",),
    Criterion.EQUALIZED_ODDS: ("tpr", "fpr"),
    Criterion.PREDICTIVE_PARITY: ("ppv",),
    Criterion.FOR_PARITY: ("for",),
    Criterion.SUFFICIENCY: ("ppv", "for"),
}

NEEDS_OUTCOME = {
    Criterion.EQUAL_OPPORTUNITY,
    Criterion.PREDICTIVE_EQUALITY,
    Criterion.EQUALIZED_ODDS,
    Criterion.PREDICTIVE_PARITY,
    Criterion.FOR_PARITY,
    Criterion.SUFFICIENCY,
}


@dataclass(frozen=True)
class FairnessConstraint:
    criterion: Criterion
    epsilon: float = 0.0
    strata: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "criterion", Criterion(self.criterion))
        if not 0.0 <= self.epsilon <= 1.0:
            raise SchemaError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.strata is not None:
            object.__setattr__(self, "strata", tuple(self.strata))
            if not self.strata:
                raise SchemaError("strata must be nonempty when given")

    @property
    def components(self) -> tuple[str, ...]:
        return COMPONENTS[self.criterion]


@dataclass(frozen=True)
class Undefined:
    """A conditional rate whose conditioning set is empty."""

    component: str
    group: str
    condition: str
    stratum: str | None = None

    def message(self) -> str:
        where = f"group {self.group!r}"
        if self.stratum is not None:
            where += f", stratum {self.stratum!r}"
        return f"{self.component} undefined for {where}: no instances with {self.condition}"


@dataclass
class GroupRates:
    group: str
    count: int
    acceptance: float
    tpr: float | None = None
    fpr: float | None = None
    ppv: float | None = None
    for_rate: float | None = None
    base_rate: float | None = None


@dataclass
class GapReport:
    gaps: dict[str, float | None]
    rates: dict[str, GroupRates]
    passed: dict[str, bool] = field(default_factory=dict)
    undefined: list[Undefined] = field(default_factory=list)
    constraint: FairnessConstraint | None = None

    @property
    def warnings(self) -> list[str]:
        return [u.message() for u in self.undefined]

    @property
    def ok(self) -> bool:
        return all(self.passed.values())


def rate_gap(rates: Mapping[str, float | None]) -> float | None:
    """Max pairwise absolute difference over the defined rates."""
    defined = [v for v in rates.values() if v is not None]
    if not defined:
        return None
    return max(defined) - min(defined)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def _columns(instances) -> Columns:
    return instances if isinstance(instances, Columns) else Columns(instances)


def _declared_groups(cols: Columns, groups: Sequence[str] | None) -> list[str]:
    present = sorted(set(cols.group.tolist()))
    if groups is None:
        if not present:
            raise EmptyGroup("no instances")
        return present
    groups = list(groups)
    for g in groups:
        if g not in present:
            raise EmptyGroup(f"declared group {g!r} has no instances")
    unknown = set(present) - set(groups)
    if unknown:
        raise SchemaError(f"instances reference undeclared groups {sorted(unknown)}")
    return groups


def _require(cols: Columns, arr: np.ndarray, exc, what: str):
    missing = np.flatnonzero(np.isnan(arr))
    if missing.size:
        raise exc(f"instance {cols.ids[missing[0]]!r} has no {what}")


def acceptance_rates(
    instances: Sequence[LabeledInstance], groups: Sequence[str] | None = None
) -> dict[str, float]:
    """Empirical P(D=1 | A=a) per group."""
    cols = _columns(instances)
    _require(cols, cols.decision, MissingDecision, "decision")
    out = {}
    for g in _declared_groups(cols, groups):
        mask = cols.group == g
        out[g] = int(np.count_nonzero(cols.decision[mask] == 1)) / int(mask.sum())
    return out


def independence_gap(instances, groups=None) -> float:
    return rate_gap(acceptance_rates(instances, groups))


def _conditional(cols, groups, strata=None, sink=None):
    _require(cols, cols.decision, MissingDecision, "decision")
    for i, s in enumerate(cols.stratum):
        if s is None or (strata is not None and s not in strata):
            raise MissingStratum(f"instance {cols.ids[i]!r} has no stratum in the declared set")
    levels = list(strata) if strata is not None else sorted(set(cols.stratum.tolist()))
    per_stratum = {}
    for s in levels:
        in_s = cols.stratum == s
        rates = {}
        for g in groups:
            mask = in_s & (cols.group == g)
            n = int(mask.sum())
            if n == 0:
                if sink is not None:
                    sink.append(Undefined("conditional_acceptance", g, f"stratum {s!r}", s))
                continue
            rates[g] = int(np.count_nonzero(cols.decision[mask] == 1)) / n
        per_stratum[s] = rates
    gaps = [rate_gap(r) for r in per_stratum.values()]
    gaps = [x for x in gaps if x is not None]
    return (max(gaps) if gaps else None), per_stratum


def conditional_parity_gap(instances, strata=None, groups=None) -> float | None:
    """Largest within-stratum independence gap.

    Empty (group, stratum) cells are skipped; use :func:`audit` to see them
    listed.
    """
    cols = _columns(instances)
    gap, _ = _conditional(cols, _declared_groups(cols, groups), strata)
    return gap


def _outcome_rates(cols: Columns, groups, sink=None) -> dict[str, dict[str, float | None]]:
    _require(cols, cols.decision, MissingDecision, "decision")
    _require(cols, cols.outcome, MissingOutcome, "outcome y")
    table = {}
    for g in groups:
        mask = cols.group == g
        d = cols.decision[mask] == 1
        y = cols.outcome[mask] == 1
        tp = int(np.count_nonzero(d & y))
        fp = int(np.count_nonzero(d & ~y))
        fn = int(np.count_nonzero(~d & y))
        tn = int(np.count_nonzero(~d & ~y))
        row = {
            "tpr": _ratio(tp, tp + fn),
            "fpr": _ratio(fp, fp + tn),
            "ppv": _ratio(tp, tp + fp),
            "for": _ratio(fn, fn + tn),
            "base_rate": _ratio(tp + fn, int(mask.sum())),
        }
        if sink is not None:
            for comp, cond in (("tpr", "Y=1"), ("fpr", "Y=0"), ("ppv", "D=1"), ("for", "D=0")):
                if row[comp] is None:
                    sink.append(Undefined(comp, g, cond))
        table[g] = row
    return table


def separation_gaps(instances, groups=None) -> tuple[float | None, float | None]:
    """(TPR gap, FPR gap); groups without Y=1 (resp. Y=0) members are excluded."""
    cols = _columns(instances)
    table = _outcome_rates(cols, _declared_groups(cols, groups))
    return (
        rate_gap({g: r["tpr"] for g, r in table.items()}),
        rate_gap({g: r["fpr"] for g, r in table.items()}),
    )


def sufficiency_gaps(instances, groups=None) -> tuple[float | None, float | None]:
    """(PPV gap, FOR gap); groups without D=1 (resp. D=0) members are excluded."""
    cols = _columns(instances)
    table = _outcome_rates(cols, _declared_groups(cols, groups))
    return (
        rate_gap({g: r["ppv"] for g, r in table.items()}),
        rate_gap({g: r["for"] for g, r in table.items()}),
    )


def audit(
    instances: Sequence[LabeledInstance],
    constraint: FairnessConstraint | None = None,
    groups: Sequence[str] | None = None,
) -> GapReport:
    """Compute every gap the available columns allow and gate on ``constraint``.

    Outcome-based gaps are reported when every instance carries an outcome,
    the conditional gap when every instance carries a stratum. Fields the
    audited criterion needs are mandatory.
    """
    cols = _columns(instances)
    groups = _declared_groups(cols, groups)
    acc = acceptance_rates(cols, groups)
    undefined: list[Undefined] = []
    gaps: dict[str, float | None] = {"acceptance": rate_gap(acc)}
    rates = {
        g: GroupRates(group=g, count=int((cols.group == g).sum()), acceptance=acc[g])
        for g in groups
    }

    criterion = constraint.criterion if constraint else None
    have_y = not np.isnan(cols.outcome).any()
    if criterion in NEEDS_OUTCOME and not have_y:
        _require(cols, cols.outcome, MissingOutcome, "outcome y")
    if have_y and len(cols):
        table = _outcome_rates(cols, groups, undefined)
        for comp in ("tpr", "fpr", "ppv", "for"):
            gaps[comp] = rate_gap({g: r[comp] for g, r in table.items()})
        for g, r in table.items():
            rates[g].tpr, rates[g].fpr = r["tpr"], r["fpr"]
            rates[g].ppv, rates[g].for_rate = r["ppv"], r["for"]
            rates[g].base_rate = r["base_rate"]

    have_strata = all(s is not None for s in cols.stratum)
    if criterion is Criterion.CONDITIONAL_STATISTICAL_PARITY or (have_strata and len(cols)):
        strata = constraint.strata if constraint is not None else None
        gaps["conditional_acceptance"], _ = _conditional(cols, groups, strata, undefined)

    report = GapReport(gaps=gaps, rates=rates, undefined=undefined, constraint=constraint)
    if constraint is not None:
        defined = [gaps[c] for c in constraint.components if gaps.get(c) is not None]
        report.passed[constraint.criterion.value] = all(
            v <= constraint.epsilon for v in defined
        )
    return report
