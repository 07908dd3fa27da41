"""Scored individuals and their column-array view."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInstance


@dataclass(frozen=True, slots=True)
class LabeledInstance:
    """One scored individual.

    ``outcome`` is the target Y, ``decision`` is D and ``calibrated_p`` the
    probability estimate. ``stratum`` holds the legitimate feature used by
    conditional statistical parity.
    """

    id: str
    raw_score: float
    group: str
    outcome: int | None = None
    stratum: str | None = None
    decision: int | None = None
    calibrated_p: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.raw_score):
            raise InvalidInstance(f"instance {self.id!r}: raw score must be finite")
        if self.outcome is not None and self.outcome not in (0, 1):
            raise InvalidInstance(f"instance {self.id!r}: outcome must be 0 or 1")
        if self.decision is not None and self.decision not in (0, 1):
            raise InvalidInstance(f"instance {self.id!r}: decision must be 0 or 1")
        if self.calibrated_p is not None and not 0.0 <= self.calibrated_p <= 1.0:
            raise InvalidInstance(f"instance {self.id!r}: calibrated_p outside [0, 1]")


def group_ids(instances: Iterable[LabeledInstance]) -> list[str]:
    """Distinct groups, sorted so that downstream reductions are deterministic."""
    return sorted({inst.group for inst in instances})


class Columns:
    """Array view over a sequence of instances.

    Optional fields become float arrays with NaN where absent, so callers can
    test presence with ``np.isnan``.
    """

    def __init__(self, instances: Sequence[LabeledInstance]):
        self.instances = list(instances)
        n = len(self.instances)
        self.ids = [inst.id for inst in self.instances]
        self.group = np.array([inst.group for inst in self.instances], dtype=object)
        self.score = np.fromiter((inst.raw_score for inst in self.instances), float, n)
        self.outcome = _optional(self.instances, "outcome", n)
        self.decision = _optional(self.instances, "decision", n)
        self.p_hat = _optional(self.instances, "calibrated_p", n)
        self.stratum = np.array(
            [inst.stratum for inst in self.instances], dtype=object
        )

    def __len__(self):
        return len(self.instances)


def _optional(instances, name, n):
    return np.fromiter(
        (np.nan if getattr(inst, name) is None else getattr(inst, name) for inst in instances),
        float,
        n,
    )
