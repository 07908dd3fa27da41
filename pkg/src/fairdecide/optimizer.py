"""Expected-utility decision rules, with and without a group-fairness constraint.

A decision rule is evaluated against per-group baseline distributions: each
baseline bin contributes ``q * w * ((alpha + beta) * m - (beta + gamma))`` to
the per-capita utility on top of the outside option ``gamma``, where ``q`` is
the rule's acceptance probability on the bin, ``w`` its mass and ``m`` its
midpoint probability.

Constrained search runs on a threshold grid ``{0, 1/K, ..., 1}`` (plus the
unconstrained optimum). Thresholds that accept the same mass-bearing bins are
merged into one class per group before searching. Rule families:

* independence, conditional statistical parity, equal opportunity and
  predictive equality: one deterministic accept-above threshold per group,
  feasible when the spread of the constrained rate across groups is <= eps;
* predictive parity and FOR parity: a target value ``v`` on the grid; each
  group takes a deterministic threshold whose direction is fixed by ``v``
  against the group base rate, and whose rate lies within eps/2 of ``v``;
* equalized odds and sufficiency: a target pair on the grid; each group takes
  a deterministic threshold or a randomized band mixing a threshold rule with
  accept-all or reject-all, with both rates within eps/2 of the target.

Ties in utility (to 1e-12) are broken by the smallest threshold spread across
groups, then per group by: deterministic before randomized, closeness to the
unconstrained threshold, lower thresholds, lower mix.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .baseline import BaselineDistribution, Direction, rates_from_acceptance
from .calibration import GLOBAL
from .errors import (
    DegenerateUtility,
    GroupMismatch,
    Infeasible,
    MissingDeliverable,
    NegativeRegime,
    SchemaError,
    UncalibratedInstances,
    UnknownGroup,
)
from .instances import LabeledInstance
from .metrics import COMPONENTS, Criterion, FairnessConstraint

TOL = 1e-12
DEFAULT_RESOLUTION = 0.005
RANDOM_GENERATOR = "blake2b-64(seed:id)"

CellKey = tuple  # (group, stratum or None)


@dataclass(frozen=True)
class UtilityParams:
    """Gain ``alpha`` on a correct acceptance, loss ``beta`` on a wrong one,
    outside-option utility ``gamma`` on rejection."""

    alpha: float
    beta: float
    gamma: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if not math.isfinite(getattr(self, name)):
                raise SchemaError(f"utility {name} must be finite")
        if self.alpha + self.beta == 0:
            raise DegenerateUtility("alpha + beta = 0: every decision has equal utility")

    def scaled(self, c: float) -> "UtilityParams":
        return UtilityParams(self.alpha * c, self.beta * c, self.gamma * c)


@dataclass(frozen=True)
class GroupRule:
    """Two-threshold rule for one group (or one group-stratum cell).

    accept-above: accept when ``p >= tau_hi``, reject when ``p < tau_lo``,
    accept with probability ``mix`` on ``[tau_lo, tau_hi)``.
    accept-below mirrors this: accept when ``p <= tau_lo``, reject when
    ``p > tau_hi``, ``mix`` on ``(tau_lo, tau_hi]``.
    """

    group: str
    tau_lo: float
    tau_hi: float
    mix: float = 0.0
    direction: Direction = Direction.ABOVE
    stratum: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        if not (math.isfinite(self.tau_lo) and math.isfinite(self.tau_hi)):
            raise SchemaError("thresholds must be finite")
        if self.tau_lo > self.tau_hi:
            raise SchemaError(f"rule for {self.group!r}: tau_lo > tau_hi")
        if not 0.0 <= self.mix <= 1.0:
            raise SchemaError(f"rule for {self.group!r}: mix outside [0, 1]")

    @classmethod
    def threshold(cls, group, tau, direction=Direction.ABOVE, stratum=None):
        return cls(group, tau, tau, 0.0, direction, stratum)

    @property
    def key(self) -> CellKey:
        return (self.group, self.stratum)

    @property
    def deterministic(self) -> bool:
        return self.tau_lo == self.tau_hi or self.mix in (0.0, 1.0)

    def acceptance(self, p) -> np.ndarray:
        p = np.asarray(p, float)
        if self.direction is Direction.ABOVE:
            return np.where(p >= self.tau_hi, 1.0, np.where(p >= self.tau_lo, self.mix, 0.0))
        return np.where(p <= self.tau_lo, 1.0, np.where(p <= self.tau_hi, self.mix, 0.0))


@dataclass(frozen=True)
class DecisionRule:
    entries: tuple[GroupRule, ...]

    def __post_init__(self):
        keys = [e.key for e in self.entries]
        if len(set(keys)) != len(keys):
            raise SchemaError("decision rule has duplicate group entries")

    def lookup(self, group: str, stratum: str | None = None) -> GroupRule:
        for e in self.entries:
            if e.group == group and e.stratum == stratum:
                return e
        for e in self.entries:
            if e.group == group and e.stratum is None:
                return e
        for e in self.entries:
            if e.group == GLOBAL:
                return e
        where = repr(group) if stratum is None else f"{group!r}/{stratum!r}"
        raise UnknownGroup(f"decision rule has no entry for {where}")

    @property
    def randomized(self) -> bool:
        """True when some decisions depend on the seeded draw."""
        return any(not e.deterministic for e in self.entries)

    @property
    def groups(self) -> list[str]:
        return sorted({e.group for e in self.entries})


@dataclass
class OptimizationResult:
    rule: DecisionRule
    expected_utility: float
    achieved_gaps: dict[str, float | None]
    binding: dict[str, bool] = field(default_factory=dict)
    search_trace: dict = field(default_factory=dict)
    constraint: FairnessConstraint | None = None
    unconstrained_utility: float | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def cost_of_fairness(self) -> float | None:
        if self.unconstrained_utility is None:
            return None
        return self.unconstrained_utility - self.expected_utility


# --------------------------------------------------------------------------
# Baseline cells


@dataclass
class _Cell:
    key: CellKey
    baseline: BaselineDistribution
    weight: float

    def __post_init__(self):
        self.m = self.baseline.midpoints
        self.w = self.baseline.weights
        self.total = float(self.w.sum())
        self.pos = float(self.w @ self.m)
        self.neg = float(self.w @ (1 - self.m))


def _cells(baselines, weights=None, stratified=False) -> list[_Cell]:
    chosen = [b for b in baselines if (b.stratum is not None) == stratified]
    if not chosen:
        raise SchemaError("no baselines supplied")
    keys = [b.key for b in chosen]
    if len(set(keys)) != len(keys):
        raise SchemaError("duplicate baselines for the same group")
    if weights is None:
        total = sum(b.count for b in chosen)
        shares = {b.key: b.count / total for b in chosen}
    else:
        shares = {}
        for b in chosen:
            w = weights.get(b.key, weights.get(b.group) if b.stratum is None else None)
            if w is None:
                raise GroupMismatch(f"no population weight for {b.key}")
            shares[b.key] = float(w)
        if abs(sum(shares.values()) - 1.0) > 1e-9:
            raise SchemaError("group weights must sum to 1")
    cells = [_Cell(b.key, b, shares[b.key]) for b in chosen]
    return sorted(cells, key=lambda c: (c.key[0], c.key[1] or ""))


def evaluate_utility(
    rule: DecisionRule,
    baselines: Sequence[BaselineDistribution],
    weights: Mapping | None,
    u: UtilityParams,
) -> float:
    """Per-capita expected utility of ``rule`` under the baselines."""
    stratified = any(e.stratum is not None for e in rule.entries)
    total = u.gamma
    for cell in _cells(baselines, weights, stratified):
        try:
            entry = rule.lookup(*cell.key)
        except UnknownGroup as exc:
            raise GroupMismatch(str(exc)) from None
        q = entry.acceptance(cell.m)
        coef = (u.alpha + u.beta) * cell.m - (u.beta + u.gamma)
        total += cell.weight * float(q @ (cell.w * coef))
    return total


def optimal_unconstrained_threshold(u: UtilityParams) -> float:
    """Accept iff p >= (beta + gamma) / (alpha + beta)."""
    s = u.alpha + u.beta
    if s == 0:
        raise DegenerateUtility("alpha + beta = 0")
    if s < 0:
        raise NegativeRegime(
            "alpha + beta < 0 inverts the threshold rule; refusing to optimize"
        )
    return (u.beta + u.gamma) / s


def _gaps_for(rule: DecisionRule, cells: list[_Cell], stratified: bool) -> dict:
    rates = {}
    for cell in cells:
        q = rule.lookup(*cell.key).acceptance(cell.m)
        rates[cell.key] = rates_from_acceptance(cell.baseline, q)

    def gap(values):
        values = [v for v in values if v is not None]
        return max(values) - min(values) if values else None

    gaps = {}
    if stratified:
        per = {}
        for key, r in rates.items():
            per.setdefault(key[1], []).append(r.acceptance)
        gs = [gap(v) for v in per.values()]
        gs = [g for g in gs if g is not None]
        gaps["conditional_acceptance"] = max(gs) if gs else None
    else:
        for name, attr in (
            ("acceptance", "acceptance"),
            ("tpr", "tpr"),
            ("fpr", "fpr"),
            ("ppv", "ppv"),
            ("for", "for_rate"),
        ):
            gaps[name] = gap([getattr(r, attr) for r in rates.values()])
    return gaps


def optimize_unconstrained(baselines, weights, u: UtilityParams) -> OptimizationResult:
    tau = optimal_unconstrained_threshold(u)
    cells = _cells(baselines, weights)
    rule = DecisionRule(tuple(GroupRule.threshold(c.key[0], tau) for c in cells))
    utility = evaluate_utility(rule, baselines, weights, u)
    return OptimizationResult(
        rule=rule,
        expected_utility=utility,
        achieved_gaps=_gaps_for(rule, cells, False),
        search_trace={"family": "closed-form", "threshold": tau, "evaluations": 0},
        unconstrained_utility=utility,
    )


# --------------------------------------------------------------------------
# Per-cell candidate tables


@dataclass
class _Options:
    """Candidate rules for one cell, with mass-weighted rates and utility."""

    cell: _Cell
    lo: np.ndarray
    hi: np.ndarray
    mix: np.ndarray
    below: np.ndarray  # bool: accept-below direction
    acc: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    randomized: np.ndarray
    tau_star: float
    u: np.ndarray = None
    prio: np.ndarray = None

    def finish(self, util: UtilityParams):
        self.u = self.cell.weight * ((util.alpha + util.beta) * self.tp - (util.beta + util.gamma) * self.acc)
        anchor = np.where(self.randomized & (self.lo == 0.0), self.hi, self.lo)
        order = np.lexsort(
            (self.mix, self.hi, self.lo, np.abs(anchor - self.tau_star), self.randomized)
        )
        self.prio = np.empty(order.size, int)
        self.prio[order] = np.arange(order.size)
        return self

    def stat(self, name: str) -> np.ndarray:
        c = self.cell
        with np.errstate(divide="ignore", invalid="ignore"):
            if name == "acceptance":
                return self.acc
            if name == "tpr":
                return self.tp / c.pos
            if name == "fpr":
                return self.fp / c.neg
            if name == "ppv":
                return np.where(self.acc > 0, self.tp / self.acc, np.nan)
            if name == "for":
                rej = c.total - self.acc
                return np.where(rej > TOL, (c.pos - self.tp) / rej, np.nan)
        raise ValueError(name)

    def rule(self, i: int) -> GroupRule:
        direction = Direction.BELOW if self.below[i] else Direction.ABOVE
        return GroupRule(
            self.cell.key[0],
            float(self.lo[i]),
            float(self.hi[i]),
            float(self.mix[i]),
            direction,
            self.cell.key[1],
        )


def _grid(resolution: float) -> tuple[int, np.ndarray]:
    if not 0 < resolution <= 0.1:
        raise SchemaError(f"resolution must lie in (0, 0.1], got {resolution}")
    k = int(round(1.0 / resolution))
    return k, np.arange(k + 1) / k


def _splits_bin(cell: _Cell, thresholds: np.ndarray, direction: Direction) -> np.ndarray:
    """True where a threshold falls inside a mass-bearing bin.

    Inside such a bin the comparison on the raw probability disagrees with
    the comparison on the bin midpoint for part of the bin's instances.
    """
    edges = cell.baseline.bin_edges
    b = np.clip(np.searchsorted(edges, thresholds, side="right") - 1, 0, edges.size - 2)
    massive = cell.w[b] > 0
    if direction is Direction.ABOVE:
        return massive & (edges[b] < thresholds) & (thresholds <= 1.0)
    return massive & (edges[b] <= thresholds) & (thresholds < edges[b + 1])


def threshold_classes(cell: _Cell, thresholds: np.ndarray, direction: Direction, tau_star: float):
    """Merge thresholds that accept the same mass-bearing bins.

    Returns (representative thresholds, acc, tp, fp) sorted by representative.
    The representative is ``tau_star`` when it falls in the class. Otherwise
    it is the member closest to ``tau_star`` (lower on ties) among those that
    do not cut through a mass-bearing bin, so that applying the rule to the
    raw probabilities accepts exactly the bins the baseline model accepts.
    """
    nz = np.flatnonzero(cell.w > 0)
    m = cell.m[nz]
    w = cell.w[nz]
    if direction is Direction.ABOVE:
        sig = nz.size - np.searchsorted(m, thresholds, side="left")
        # suffix sums: index s = number of accepted top bins
        acc_c = np.concatenate([[0.0], np.cumsum(w[::-1])])
        tp_c = np.concatenate([[0.0], np.cumsum((w * m)[::-1])])
        fp_c = np.concatenate([[0.0], np.cumsum((w * (1 - m))[::-1])])
    else:
        sig = np.searchsorted(m, thresholds, side="right")
        acc_c = np.concatenate([[0.0], np.cumsum(w)])
        tp_c = np.concatenate([[0.0], np.cumsum(w * m)])
        fp_c = np.concatenate([[0.0], np.cumsum(w * (1 - m))])
    splits = _splits_bin(cell, thresholds, direction)
    reps, sigs = [], []
    for s in np.unique(sig):
        here = sig == s
        members = thresholds[here]
        order = np.lexsort((members, np.abs(members - tau_star), splits[here], members != tau_star))
        rep = members[order[0]]
        reps.append(float(rep))
        sigs.append(int(s))
    order = np.argsort(reps, kind="stable")
    reps = np.asarray(reps)[order]
    sigs = np.asarray(sigs)[order]
    return reps, acc_c[sigs], tp_c[sigs], fp_c[sigs]


def _deterministic_options(cell, thresholds, direction, tau_star) -> _Options:
    reps, acc, tp, fp = threshold_classes(cell, thresholds, direction, tau_star)
    n = reps.size
    return _Options(
        cell=cell,
        lo=reps,
        hi=reps.copy(),
        mix=np.zeros(n),
        below=np.full(n, direction is Direction.BELOW),
        acc=acc,
        tp=tp,
        fp=fp,
        randomized=np.zeros(n, bool),
        tau_star=tau_star,
    )


def _randomized_options(cell, thresholds, tau_star, k: int) -> _Options:
    """Deterministic classes plus bands mixing each with accept-all or reject-all."""
    det = _deterministic_options(cell, thresholds, Direction.ABOVE, tau_star)
    mixes = np.arange(1, k) / k
    parts = [det]
    # Accept everything at or above tau; below it accept with probability mix.
    keep = (det.cell.total - det.acc) > 0
    reps = det.lo[keep]
    if reps.size and mixes.size:
        mm = np.repeat(mixes[None, :], reps.size, 0).ravel()
        r = np.repeat(reps, mixes.size)
        a = np.repeat(det.acc[keep], mixes.size)
        t = np.repeat(det.tp[keep], mixes.size)
        f = np.repeat(det.fp[keep], mixes.size)
        lo = np.minimum(0.0, r)
        parts.append(
            _Options(
                cell, lo, r, mm, np.zeros(r.size, bool),
                a + mm * (cell.total - a), t + mm * (cell.pos - t), f + mm * (cell.neg - f),
                np.ones(r.size, bool), tau_star,
            )
        )
    # Accept at or above tau with probability mix, reject the rest.
    keep = det.acc > 0
    reps = det.lo[keep]
    if reps.size and mixes.size:
        mm = np.repeat(mixes[None, :], reps.size, 0).ravel()
        r = np.repeat(reps, mixes.size)
        hi = np.maximum(1.0, r)
        parts.append(
            _Options(
                cell, r, hi, mm, np.zeros(r.size, bool),
                mm * np.repeat(det.acc[keep], mixes.size),
                mm * np.repeat(det.tp[keep], mixes.size),
                mm * np.repeat(det.fp[keep], mixes.size),
                np.ones(r.size, bool), tau_star,
            )
        )
    return _concat(parts)


def _concat(parts: list[_Options]) -> _Options:
    first = parts[0]
    cat = {
        name: np.concatenate([getattr(p, name) for p in parts])
        for name in ("lo", "hi", "mix", "below", "acc", "tp", "fp", "randomized")
    }
    return _Options(cell=first.cell, tau_star=first.tau_star, **cat)


# --------------------------------------------------------------------------
# Selection


def _spread(rules: Sequence[GroupRule]) -> float:
    lo = [r.tau_lo for r in rules]
    hi = [r.tau_hi for r in rules]
    return max(max(lo) - min(lo), max(hi) - min(hi))


def _choose(tuples: list[tuple[int, ...]], options: list[_Options]) -> tuple[int, ...]:
    def key(t):
        rules = [opt.rule(i) for opt, i in zip(options, t)]
        return (round(_spread(rules), 12), tuple(int(opt.prio[i]) for opt, i in zip(options, t)))

    return min(set(tuples), key=key)


def _best_per_target(opt: _Options, option_idx: np.ndarray, target_idx: np.ndarray):
    """For each covered target, the best option (utility, then priority)."""
    ur = np.round(opt.u[option_idx], 12)
    order = np.lexsort((opt.prio[option_idx], -ur, target_idx))
    t_sorted = target_idx[order]
    targets, first = np.unique(t_sorted, return_index=True)
    chosen = option_idx[order][first]
    return targets, chosen, np.round(opt.u[chosen], 12)


def _combine(options: list[_Options], covers: list[tuple[np.ndarray, np.ndarray]]):
    """Sum per-target best utilities across cells; return the winning tuple."""
    per = [_best_per_target(opt, oi, ti) for opt, (oi, ti) in zip(options, covers)]
    common = per[0][0]
    for targets, _, _ in per[1:]:
        common = np.intersect1d(common, targets, assume_unique=True)
    if common.size == 0:
        return None
    total = np.zeros(common.size)
    picks = []
    for targets, chosen, util in per:
        pos = np.searchsorted(targets, common)
        total += util[pos]
        picks.append(chosen[pos])
    total = np.round(total, 12)
    best = total.max()
    winners = np.flatnonzero(total == best)
    tuples = [tuple(int(p[w]) for p in picks) for w in winners]
    chosen = _choose(tuples, options)
    target = int(common[winners[tuples.index(chosen)]])
    return chosen, target


def _cover(values: np.ndarray, k: int, half_width: float):
    """Grid indices j with |value - j/k| <= half_width, as (option, j) pairs."""
    span = int(math.ceil(half_width * k)) + 1
    offsets = np.arange(-span, span + 1)
    finite = np.isfinite(values)
    centre = np.rint(np.where(finite, values, 0.0) * k).astype(int)
    j = centre[:, None] + offsets[None, :]
    ok = (
        finite[:, None]
        & (j >= 0)
        & (j <= k)
        & (np.abs(np.where(finite, values, 0.0)[:, None] - j / k) <= half_width + TOL)
    )
    return j, ok


def _solve_window(options: list[_Options], stat: str, eps: float):
    """Deterministic family: all cells' ``stat`` within a window of width eps."""
    stats = [opt.stat(stat) for opt in options]
    anchors = np.unique(np.concatenate(stats))
    oi_all, ti_all = [], []
    for st in stats:
        feas = (st[None, :] >= anchors[:, None]) & (st[None, :] <= anchors[:, None] + eps + TOL)
        ti, oi = np.nonzero(feas)
        oi_all.append(oi)
        ti_all.append(ti)
    out = _combine(options, list(zip(oi_all, ti_all)))
    evaluations = int(sum(o.size for o in oi_all))
    if out is None:
        return None, evaluations
    return out[0], evaluations


def _required_direction(v: float, base: float, criterion: Criterion) -> Direction | None:
    if v == base:
        return None
    above = v > base if criterion is Criterion.PREDICTIVE_PARITY else v < base
    return Direction.ABOVE if above else Direction.BELOW


def _solve_parity_target(options, cells, criterion, eps, k, grid, warnings):
    """Predictive parity / FOR parity: scan target v, direction fixed by v against each base rate."""
    stat = "ppv" if criterion is Criterion.PREDICTIVE_PARITY else "for"
    covers = []
    evaluations = 0
    for opt, cell in zip(options, cells):
        j, ok = _cover(opt.stat(stat), k, eps / 2)
        oi, col = np.nonzero(ok)
        ti = j[oi, col]
        required = np.array(
            [_required_direction(v, cell.baseline.base_rate, criterion) for v in grid], object
        )
        need_below = np.array([d is Direction.BELOW for d in required])
        keep = opt.below[oi] == need_below[ti]
        covers.append((oi[keep], ti[keep]))
        evaluations += int(keep.sum())
    out = _combine(options, covers)
    if out is None:
        return None, evaluations, None
    chosen, target = out
    v = float(grid[target])
    for cell in cells:
        if v == cell.baseline.base_rate:
            warnings.append(
                f"target {v} equals the base rate of group {cell.key[0]!r}; accept-above used"
            )
    return chosen, evaluations, {"v": v}


def _preference_rank(opt: _Options) -> np.ndarray:
    """Rank 0 is the most preferred option: highest rounded utility, then prio."""
    order = np.lexsort((opt.prio, -np.round(opt.u, 12)))
    rank = np.empty(order.size, np.int64)
    rank[order] = np.arange(order.size)
    return rank


def _range_min(values: np.ndarray, lo: np.ndarray, hi: np.ndarray, empty: int) -> np.ndarray:
    """min(values[lo_i:hi_i]) per i, ``empty`` where the range is empty."""
    padded = np.append(values, empty)
    idx = np.stack([lo, hi], 1).ravel()
    out = np.minimum.reduceat(padded, np.minimum(idx, values.size))[::2]
    return np.where(hi > lo, out, empty)


def _best_on_target_grid(opt: _Options, stat_a, stat_b, grid, half):
    """Best option index per 2-D grid target (row-major), -1 where none fits."""
    g = grid.size
    rank = _preference_rank(opt)
    order = np.argsort(rank)
    a, b = stat_a[order], stat_b[order]
    finite = np.isfinite(a) & np.isfinite(b)
    a, b, ranked = a[finite], b[finite], np.arange(order.size)[finite]
    empty = np.iinfo(np.int64).max
    table = np.full((g, g), empty, np.int64)
    by_a = np.argsort(a, kind="stable")
    a_sorted = a[by_a]
    lo_a = np.searchsorted(a_sorted, grid - half - TOL, "left")
    hi_a = np.searchsorted(a_sorted, grid + half + TOL, "right")
    for ja in range(g):
        if hi_a[ja] <= lo_a[ja]:
            continue
        sub = by_a[lo_a[ja]:hi_a[ja]]
        by_b = sub[np.argsort(b[sub], kind="stable")]
        b_sorted = b[by_b]
        lo = np.searchsorted(b_sorted, grid - half - TOL, "left")
        hi = np.searchsorted(b_sorted, grid + half + TOL, "right")
        table[ja] = _range_min(ranked[by_b], lo, hi, empty)
    flat = table.ravel()
    best = np.full(flat.size, -1, np.int64)
    hit = flat != empty
    best[hit] = order[flat[hit]]
    return best


def _solve_pair_target(options, stats, eps, k, grid):
    """Equalized odds / sufficiency: a 2-D target, each group within eps/2."""
    covers = []
    evaluations = 0
    for opt in options:
        best = _best_on_target_grid(opt, opt.stat(stats[0]), opt.stat(stats[1]), grid, eps / 2)
        ti = np.flatnonzero(best >= 0)
        covers.append((best[ti], ti))
        evaluations += ti.size
    out = _combine(options, covers)
    if out is None:
        return None, evaluations, None
    chosen, target = out
    return chosen, evaluations, {stats[0]: float(grid[target // (k + 1)]), stats[1]: float(grid[target % (k + 1)])}


def _stratum_cells(baselines, weights, constraint) -> list[_Cell]:
    if not any(b.stratum is not None for b in baselines):
        raise MissingDeliverable(["stratum-specific baseline distributions"])
    cells = _cells(baselines, weights, stratified=True)
    if constraint.strata is not None:
        cells = [c for c in cells if c.key[1] in constraint.strata]
        if abs(sum(c.weight for c in cells) - 1.0) > 1e-9:
            total = sum(c.weight for c in cells)
            for c in cells:
                c.weight /= total
    return cells


def optimize_constrained(
    baselines: Sequence[BaselineDistribution],
    weights: Mapping | None,
    u: UtilityParams,
    constraint: FairnessConstraint,
    resolution: float = DEFAULT_RESOLUTION,
) -> OptimizationResult:
    """Utility-maximal rule in the criterion's family whose gaps are <= eps."""
    if any(b.group == GLOBAL for b in baselines):
        raise MissingDeliverable(["group-specific baseline distributions"])
    tau_star = optimal_unconstrained_threshold(u)
    k, grid = _grid(resolution)
    thresholds = np.unique(np.append(grid, tau_star))
    criterion = constraint.criterion
    eps = constraint.epsilon
    warnings: list[str] = []
    trace = {"resolution": 1.0 / k, "grid_points": k + 1}

    if criterion is Criterion.CONDITIONAL_STATISTICAL_PARITY:
        cells = _stratum_cells(baselines, weights, constraint)
        entries, evaluations = [], 0
        for stratum in sorted({c.key[1] for c in cells}):
            sub = [c for c in cells if c.key[1] == stratum]
            opts = [_deterministic_options(c, thresholds, Direction.ABOVE, tau_star).finish(u) for c in sub]
            chosen, n = _solve_window(opts, "acceptance", eps)
            evaluations += n
            if chosen is None:
                raise Infeasible(f"no feasible thresholds in stratum {stratum!r}")
            entries += [opt.rule(i) for opt, i in zip(opts, chosen)]
        trace.update(family="deterministic-threshold", evaluations=evaluations)
        stratified = True
    else:
        cells = _cells(baselines, weights)
        stratified = False
        if criterion in (Criterion.INDEPENDENCE, Criterion.EQUAL_OPPORTUNITY, Criterion.PREDICTIVE_EQUALITY):
            opts = [_deterministic_options(c, thresholds, Direction.ABOVE, tau_star).finish(u) for c in cells]
            stat = COMPONENTS[criterion][0]
            chosen, evaluations = _solve_window(opts, stat, eps)
            trace.update(family="deterministic-threshold", evaluations=evaluations)
        elif criterion in (Criterion.PREDICTIVE_PARITY, Criterion.FOR_PARITY):
            opts = [
                _concat(
                    [
                        _deterministic_options(c, thresholds, Direction.ABOVE, tau_star),
                        _deterministic_options(c, thresholds, Direction.BELOW, tau_star),
                    ]
                ).finish(u)
                for c in cells
            ]
            chosen, evaluations, target = _solve_parity_target(opts, cells, criterion, eps, k, grid, warnings)
            trace.update(family="upper-or-lower-threshold", evaluations=evaluations, target=target)
        else:
            opts = [_randomized_options(c, thresholds, tau_star, k).finish(u) for c in cells]
            stats = ("tpr", "fpr") if criterion is Criterion.EQUALIZED_ODDS else ("ppv", "for")
            chosen, evaluations, target = _solve_pair_target(opts, stats, eps, k, grid)
            trace.update(family="randomized-band", evaluations=evaluations, target=target)
        if chosen is None:
            raise Infeasible(
                f"no rule on the grid satisfies {criterion.value} with eps={eps}"
            )
        entries = [opt.rule(i) for opt, i in zip(opts, chosen)]

    rule = DecisionRule(tuple(entries))
    return _result(rule, baselines, weights, u, constraint, cells, stratified, trace, warnings)


def _result(rule, baselines, weights, u, constraint, cells, stratified, trace, warnings):
    utility = evaluate_utility(rule, baselines, weights, u)
    gaps = _gaps_for(rule, cells, stratified)
    tau_star = optimal_unconstrained_threshold(u)
    free = DecisionRule(
        tuple(GroupRule.threshold(c.key[0], tau_star, stratum=c.key[1]) for c in cells)
    )
    free_gaps = _gaps_for(free, cells, stratified)
    binding = {
        comp: free_gaps.get(comp) is not None and free_gaps[comp] > constraint.epsilon + TOL
        for comp in constraint.components
    }
    return OptimizationResult(
        rule=rule,
        expected_utility=utility,
        achieved_gaps=gaps,
        binding=binding,
        search_trace=trace,
        constraint=constraint,
        unconstrained_utility=evaluate_utility(free, baselines, weights, u),
        warnings=warnings,
    )


# --------------------------------------------------------------------------
# Applying rules


def uniform_draw(seed: int, instance_id: str) -> float:
    """Deterministic U[0, 1) draw for one instance."""
    digest = hashlib.blake2b(f"{seed}:{instance_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0**64


def apply_rule(
    rule: DecisionRule, instances: Sequence[LabeledInstance], seed: int
) -> list[LabeledInstance]:
    """Attach decisions. Band instances are accepted when their draw < mix."""
    out = []
    for inst in instances:
        if inst.calibrated_p is None:
            raise UncalibratedInstances(f"instance {inst.id!r} has no calibrated probability")
        entry = rule.lookup(inst.group, inst.stratum)
        q = float(entry.acceptance(inst.calibrated_p))
        if q in (0.0, 1.0):
            d = int(q)
        else:
            d = int(uniform_draw(seed, inst.id) < q)
        out.append(replace(inst, decision=d))
    return out
