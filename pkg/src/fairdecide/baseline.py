"""Per-group distributions of calibrated probabilities over [0, 1]."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EmptyGroup, SchemaError, UncalibratedInstances
from .instances import LabeledInstance

DEFAULT_BINS = 100
LABEL_COVERAGE = 0.9


class Direction(str, enum.Enum):
    ABOVE = "accept-above"
    BELOW = "accept-below"


@dataclass(frozen=True)
class BaselineDistribution:
    """Histogram of calibrated probabilities on equal-width bins.

    Within a bin every individual is treated as having the bin midpoint as
    their probability of Y=1. ``stratum`` is set for the per-(group, stratum)
    cells that conditional statistical parity needs.
    """

    group: str
    mass: tuple[float, ...]
    count: int
    base_rate: float
    base_rate_source: str = "outcomes"
    stratum: str | None = None

    def __post_init__(self):
        mass = np.asarray(self.mass, float)
        if mass.size < 1 or np.any(mass < 0) or abs(mass.sum() - 1.0) > 1e-9:
            raise SchemaError(f"baseline mass for group {self.group!r} must be >= 0 and sum to 1")
        if self.count <= 0:
            raise SchemaError(f"baseline for group {self.group!r} needs a positive count")
        if not 0.0 <= self.base_rate <= 1.0:
            raise SchemaError(f"baseline base rate for group {self.group!r} outside [0, 1]")

    @property
    def key(self) -> tuple[str, str | None]:
        return (self.group, self.stratum)

    @property
    def bin_count(self) -> int:
        return len(self.mass)

    @property
    def bin_edges(self) -> np.ndarray:
        return np.arange(self.bin_count + 1) / self.bin_count

    @property
    def midpoints(self) -> np.ndarray:
        # (2b+1)/(2B) rounds identically to any grid value j/K naming the same rational.
        b = self.bin_count
        return (2 * np.arange(b) + 1) / (2 * b)

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.mass, float)

    @property
    def bin_width(self) -> float:
        return 1.0 / self.bin_count

    @property
    def model_mean(self) -> float:
        """Mean probability implied by the histogram."""
        return float(self.weights @ self.midpoints)


def histogram(p: np.ndarray, bin_count: int) -> np.ndarray:
    edges = np.arange(bin_count + 1) / bin_count
    idx = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, bin_count - 1)
    return np.bincount(idx, minlength=bin_count) / p.size


def estimate_baseline(
    instances: Sequence[LabeledInstance],
    group: str,
    bin_count: int = DEFAULT_BINS,
    stratum: str | None = None,
) -> BaselineDistribution:
    """Histogram of ``calibrated_p`` for one group (optionally one stratum).

    The base rate is the outcome mean when at least 90% of the group is
    labeled, otherwise the mean calibrated probability; ``base_rate_source``
    records which.
    """
    if bin_count < 1:
        raise SchemaError("bin_count must be >= 1")
    members = [
        inst
        for inst in instances
        if inst.group == group and (stratum is None or inst.stratum == stratum)
    ]
    if not members:
        where = f"group {group!r}" + ("" if stratum is None else f", stratum {stratum!r}")
        raise EmptyGroup(f"no instances in {where}")
    missing = [inst.id for inst in members if inst.calibrated_p is None]
    if missing:
        raise UncalibratedInstances(f"instance {missing[0]!r} has no calibrated probability")
    p = np.array([inst.calibrated_p for inst in members], float)
    labels = [inst.outcome for inst in members if inst.outcome is not None]
    if len(labels) >= LABEL_COVERAGE * len(members):
        base_rate, source = sum(labels) / len(labels), "outcomes"
    else:
        base_rate, source = float(p.mean()), "calibrated"
    return BaselineDistribution(
        group=group,
        mass=tuple(float(x) for x in histogram(p, bin_count)),
        count=len(members),
        base_rate=float(min(max(base_rate, 0.0), 1.0)),
        base_rate_source=source,
        stratum=stratum,
    )


class RateCurves(NamedTuple):
    acceptance: float
    tpr: float | None
    fpr: float | None
    ppv: float | None
    for_rate: float | None


def _ratio(num: float, den: float) -> float | None:
    return num / den if den > 0 else None


def rates_from_acceptance(b: BaselineDistribution, q: np.ndarray) -> RateCurves:
    """Rates of a rule that accepts bin ``i`` with probability ``q[i]``."""
    w, m = b.weights, b.midpoints
    acc = float(q @ w)
    tp = float(q @ (w * m))
    fp = float(q @ (w * (1 - m)))
    pos = float(w @ m)
    neg = float(w @ (1 - m))
    return RateCurves(
        acceptance=acc,
        tpr=_ratio(tp, pos),
        fpr=_ratio(fp, neg),
        ppv=_ratio(tp, acc),
        for_rate=_ratio(pos - tp, float(((1 - q) * w).sum())),
    )


def expected_rate_curves(
    b: BaselineDistribution, tau: float, direction: Direction | str = Direction.ABOVE
) -> RateCurves:
    """Rates of the deterministic threshold rule ``tau`` under the baseline."""
    m = b.midpoints
    if Direction(direction) is Direction.ABOVE:
        q = (m >= tau).astype(float)
    else:
        q = (m <= tau).astype(float)
    return rates_from_acceptance(b, q)
