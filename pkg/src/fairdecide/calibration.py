"""Score-to-probability calibration by equal-frequency binning.

Bins are cut at observed score values so that tied scores always share a
bin. Bin frequencies are then made nondecreasing with pool-adjacent-violators
(count weighted). Bins are half-open ``[lo, hi)``; the top bin is closed and
scores outside the fitted range are clamped to the first/last bin.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import InsufficientData, NoLabeledData, SchemaError
from .instances import Columns, LabeledInstance

GLOBAL = "*"
DEFAULT_BINS = 10


@dataclass(frozen=True)
class CalibrationFunction:
    group_scope: str
    bin_edges: tuple[float, ...]
    bin_values: tuple[float, ...]
    fit_count: tuple[int, ...]

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, float)
        values = np.asarray(self.bin_values, float)
        k = len(self.bin_values)
        if k < 1 or len(self.bin_edges) != k + 1 or len(self.fit_count) != k:
            raise SchemaError("calibration function needs k values, k counts and k+1 edges")
        if np.any(np.diff(edges[1:-1]) <= 0) or (k > 1 and (edges[1] <= edges[0] or edges[-1] < edges[-2])):
            raise SchemaError("calibration bin edges must be strictly ascending")
        if np.any(values < 0) or np.any(values > 1) or np.any(np.diff(values) < 0):
            raise SchemaError("calibration values must be nondecreasing within [0, 1]")
        if any(c < 0 for c in self.fit_count):
            raise SchemaError("calibration bin counts must be nonnegative")

    @property
    def is_global(self) -> bool:
        return self.group_scope == GLOBAL

    def bin_index(self, scores) -> np.ndarray:
        cuts = np.asarray(self.bin_edges[1:-1], float)
        return np.searchsorted(cuts, np.asarray(scores, float), side="right")

    def __call__(self, scores) -> np.ndarray:
        return np.asarray(self.bin_values, float)[self.bin_index(scores)]


@dataclass(frozen=True)
class CalibrationBin:
    mean_score: float
    frequency: float
    count: int


@dataclass(frozen=True)
class CalibrationReport:
    group_scope: str
    expected_calibration_error: float
    bins: tuple[CalibrationBin | None, ...]
    count: int


def _scoped(instances: Sequence[LabeledInstance], group_scope: str) -> Columns:
    chosen = [
        inst
        for inst in instances
        if inst.outcome is not None and (group_scope == GLOBAL or inst.group == group_scope)
    ]
    if not chosen:
        raise NoLabeledData(f"no labeled instances for scope {group_scope!r}")
    return Columns(chosen)


def pool_adjacent_violators(values, weights) -> np.ndarray:
    """Weighted isotonic (nondecreasing) fit, returned at the input resolution."""
    blocks: list[list[float]] = []  # [mean, weight, length]
    for v, w in zip(values, weights):
        blocks.append([float(v), float(w), 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            v2, w2, n2 = blocks.pop()
            v1, w1, n1 = blocks[-1]
            total = w1 + w2
            blocks[-1] = [(v1 * w1 + v2 * w2) / total, total, n1 + n2]
    return np.concatenate([np.full(n, v) for v, _, n in blocks])


def fit_calibration(
    instances: Sequence[LabeledInstance],
    group_scope: str = GLOBAL,
    bin_count: int = DEFAULT_BINS,
) -> CalibrationFunction:
    """Fit a monotone binned calibration map on the labeled instances in scope."""
    if bin_count < 1:
        raise SchemaError("bin_count must be >= 1")
    cols = _scoped(instances, group_scope)
    n = len(cols)
    if bin_count > n:
        raise InsufficientData(
            f"bin_count {bin_count} exceeds the {n} labeled instances in scope {group_scope!r}"
        )
    scores = np.sort(cols.score)
    positions = np.round(np.arange(1, bin_count) * n / bin_count).astype(int)
    cuts = np.unique(scores[positions]) if positions.size else np.empty(0)
    cuts = cuts[cuts > scores[0]]

    idx = np.searchsorted(cuts, cols.score, side="right")
    k = cuts.size + 1
    counts = np.bincount(idx, minlength=k)
    positives = np.bincount(idx, weights=cols.outcome, minlength=k)
    values = pool_adjacent_violators(positives / counts, counts)
    edges = (float(scores[0]), *map(float, cuts), float(scores[-1]))
    return CalibrationFunction(
        group_scope=group_scope,
        bin_edges=edges,
        bin_values=tuple(float(np.clip(v, 0.0, 1.0)) for v in values),
        fit_count=tuple(int(c) for c in counts),
    )


def apply_calibration(fn: CalibrationFunction, raw_score: float) -> float:
    return float(fn([raw_score])[0])


def calibrate_instances(
    instances: Sequence[LabeledInstance], functions: dict[str, CalibrationFunction]
) -> list[LabeledInstance]:
    """Attach ``calibrated_p`` using the group's function, else the global one."""
    out = []
    for inst in instances:
        fn = functions.get(inst.group) or functions.get(GLOBAL)
        if fn is None:
            raise SchemaError(f"no calibration function covers group {inst.group!r}")
        out.append(replace(inst, calibrated_p=apply_calibration(fn, inst.raw_score)))
    return out


def calibration_error(
    fn: CalibrationFunction, instances: Sequence[LabeledInstance]
) -> CalibrationReport:
    """Count-weighted mean |empirical frequency - bin value| over fn's bins."""
    cols = _scoped(instances, GLOBAL)
    idx = fn.bin_index(cols.score)
    k = len(fn.bin_values)
    counts = np.bincount(idx, minlength=k)
    positives = np.bincount(idx, weights=cols.outcome, minlength=k)
    score_sums = np.bincount(idx, weights=cols.score, minlength=k)
    n = len(cols)
    ece = 0.0
    bins = []
    for b in range(k):
        if counts[b] == 0:
            bins.append(None)
            continue
        freq = positives[b] / counts[b]
        ece += counts[b] / n * abs(freq - fn.bin_values[b])
        bins.append(CalibrationBin(float(score_sums[b] / counts[b]), float(freq), int(counts[b])))
    return CalibrationReport(
        group_scope=fn.group_scope,
        expected_calibration_error=float(ece),
        bins=tuple(bins),
        count=n,
    )
