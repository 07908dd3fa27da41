"""Synthetic populations and brute-force oracles.

The oracles here deliberately avoid the main-path code: metrics are counted
with plain dictionaries, and constrained optima are found by enumerating every
grid threshold (and mix value) with explicit per-bin acceptance vectors.
Only the data types are shared.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .baseline import BaselineDistribution, Direction
from .errors import Infeasible, SchemaError
from .instances import LabeledInstance
from .metrics import Criterion, FairnessConstraint
from .optimizer import DecisionRule, GroupRule, UtilityParams

GENERATOR = "numpy.random.PCG64"
FEAS_TOL = 1e-12


@dataclass(frozen=True)
class StratumSpec:
    name: str
    share: float
    a: float
    b: float


@dataclass(frozen=True)
class GroupSpec:
    """One group: Beta(a, b) true probabilities, raw score = p ** distortion."""

    name: str
    size: int
    a: float
    b: float
    distortion: float = 1.0
    strata: tuple[StratumSpec, ...] = ()

    def __post_init__(self):
        if self.size < 1:
            raise SchemaError(f"group {self.name!r}: size must be >= 1")
        if self.a <= 0 or self.b <= 0:
            raise SchemaError(f"group {self.name!r}: Beta shapes must be > 0")
        if self.distortion <= 0:
            raise SchemaError(f"group {self.name!r}: distortion power must be > 0")
        if self.strata:
            object.__setattr__(self, "strata", tuple(self.strata))
            if abs(sum(s.share for s in self.strata) - 1.0) > 1e-9:
                raise SchemaError(f"group {self.name!r}: stratum shares must sum to 1")
            if any(s.a <= 0 or s.b <= 0 for s in self.strata):
                raise SchemaError(f"group {self.name!r}: Beta shapes must be > 0")


@dataclass(frozen=True)
class SyntheticSpec:
    groups: tuple[GroupSpec, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        if not self.groups:
            raise SchemaError("synthetic spec needs at least one group")
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise SchemaError("group names must be distinct")


def stage_seed(seed: int, stage: str) -> int:
    """Derive an independent seed for a named pipeline stage."""
    digest = hashlib.blake2b(f"{seed}/{stage}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def generate_population(spec: SyntheticSpec) -> list[LabeledInstance]:
    rng = np.random.default_rng(spec.seed)
    out = []
    for g in spec.groups:
        if g.strata:
            names = np.array([s.name for s in g.strata], dtype=object)
            which = rng.choice(len(g.strata), size=g.size, p=[s.share for s in g.strata])
            a = np.array([s.a for s in g.strata])[which]
            b = np.array([s.b for s in g.strata])[which]
            strata = names[which]
        else:
            a = np.full(g.size, g.a)
            b = np.full(g.size, g.b)
            strata = [None] * g.size
        p = rng.beta(a, b)
        y = (rng.random(g.size) < p).astype(int)
        score = p if g.distortion == 1.0 else p**g.distortion
        for i in range(g.size):
            out.append(
                LabeledInstance(
                    id=f"{g.name}-{i:06d}",
                    raw_score=float(score[i]),
                    group=g.name,
                    outcome=int(y[i]),
                    stratum=strata[i],
                )
            )
    return out


# --------------------------------------------------------------------------
# Metric oracle


@dataclass
class OracleGaps:
    gaps: dict
    undefined: set = field(default_factory=set)  # (component, group, condition, stratum)


def _spread(values):
    values = [v for v in values if v is not None]
    return max(values) - min(values) if values else None


def brute_force_metrics(instances: Sequence[LabeledInstance], criterion=None) -> OracleGaps:
    """Every gap by direct counting over the instance list."""
    counts: dict = {}
    for inst in instances:
        c = counts.setdefault(inst.group, {"n": 0, "d1": 0, "tp": 0, "fp": 0, "fn": 0, "tn": 0})
        c["n"] += 1
        c["d1"] += inst.decision == 1
        if inst.outcome is not None:
            key = {(1, 1): "tp", (1, 0): "fp", (0, 1): "fn", (0, 0): "tn"}[(inst.decision, inst.outcome)]
            c[key] += 1
    groups = sorted(counts)
    result = OracleGaps(gaps={"acceptance": _spread([counts[g]["d1"] / counts[g]["n"] for g in groups])})

    if all(inst.outcome is not None for inst in instances) and instances:
        table = {comp: [] for comp in ("tpr", "fpr", "ppv", "for")}
        for g in groups:
            c = counts[g]
            for comp, num, den, cond in (
                ("tpr", c["tp"], c["tp"] + c["fn"], "Y=1"),
                ("fpr", c["fp"], c["fp"] + c["tn"], "Y=0"),
                ("ppv", c["tp"], c["tp"] + c["fp"], "D=1"),
                ("for", c["fn"], c["fn"] + c["tn"], "D=0"),
            ):
                if den == 0:
                    result.undefined.add((comp, g, cond, None))
                    table[comp].append(None)
                else:
                    table[comp].append(num / den)
        for comp, vals in table.items():
            result.gaps[comp] = _spread(vals)

    if instances and all(inst.stratum is not None for inst in instances):
        cells: dict = {}
        for inst in instances:
            cell = cells.setdefault((inst.stratum, inst.group), [0, 0])
            cell[0] += 1
            cell[1] += inst.decision == 1
        per_stratum = []
        for s in sorted({inst.stratum for inst in instances}):
            vals = []
            for g in groups:
                if (s, g) in cells:
                    n, d1 = cells[(s, g)]
                    vals.append(d1 / n)
                else:
                    result.undefined.add(("conditional_acceptance", g, f"stratum {s!r}", s))
            gap = _spread(vals)
            if gap is not None:
                per_stratum.append(gap)
        result.gaps["conditional_acceptance"] = max(per_stratum) if per_stratum else None
    return result


# --------------------------------------------------------------------------
# Constrained-optimum oracle


def _bins(b: BaselineDistribution):
    k = b.bin_count
    mid = np.array([(2 * i + 1) / (2 * k) for i in range(k)])
    return mid, np.array(b.mass, float)


@dataclass
class _Table:
    """Brute-force candidate table for one cell: acceptance vectors and rates."""

    rules: list  # (direction, lo, hi, mix)
    q: np.ndarray  # (n_rules, bins)
    mid: np.ndarray
    w: np.ndarray
    weight: float
    u: UtilityParams

    def rates(self):
        tp = self.q @ (self.w * self.mid)
        fp = self.q @ (self.w * (1 - self.mid))
        acc = self.q @ self.w
        pos = self.w @ self.mid
        neg = self.w @ (1 - self.mid)
        rej = (1 - self.q) @ self.w
        with np.errstate(divide="ignore", invalid="ignore"):
            return {
                "acceptance": acc,
                "tpr": tp / pos if pos > 0 else np.full(acc.shape, np.nan),
                "fpr": fp / neg if neg > 0 else np.full(acc.shape, np.nan),
                "ppv": np.where(acc > 0, tp / acc, np.nan),
                "for": np.where(rej > FEAS_TOL, (pos - tp) / rej, np.nan),
            }

    def utility(self):
        coef = self.mid * self.u.alpha - (1 - self.mid) * self.u.beta - self.u.gamma
        return self.weight * (self.q @ (self.w * coef))

    def keys(self, tau_star):
        out = []
        for direction, lo, hi, mix in self.rules:
            randomized = lo != hi and 0 < mix < 1
            anchor = hi if randomized and lo == 0.0 else lo
            out.append((int(randomized), abs(anchor - tau_star), lo, hi, mix))
        return out


def _table(b, weight, u, rules) -> _Table:
    mid, w = _bins(b)
    if not rules:
        return _Table([], np.zeros((0, mid.size)), mid, w, weight, u)
    below = np.array([r[0] is Direction.BELOW for r in rules])[:, None]
    lo = np.array([r[1] for r in rules])[:, None]
    hi = np.array([r[2] for r in rules])[:, None]
    mix = np.array([r[3] for r in rules])[:, None]
    m = mid[None, :]
    q_above = np.where(m >= hi, 1.0, np.where(m >= lo, mix, 0.0))
    q_below = np.where(m <= lo, 1.0, np.where(m <= hi, mix, 0.0))
    return _Table(list(rules), np.where(below, q_below, q_above), mid, w, weight, u)


def _weights(baselines, weights):
    if weights is None:
        total = sum(b.count for b in baselines)
        return [b.count / total for b in baselines]
    out = []
    for b in baselines:
        out.append(float(weights[b.key] if b.key in weights else weights[b.group]))
    return out


def _rule_spread(rules):
    lo = [r[1] for r in rules]
    hi = [r[2] for r in rules]
    return max(max(lo) - min(lo), max(hi) - min(hi))


def _pick(candidates, tau_star):
    """candidates: list of (utility, [(rule, key), ...]); apply the tie-break."""
    best = max(round(c[0], 12) for c in candidates)
    tied = [c for c in candidates if round(c[0], 12) == best]
    return min(
        tied,
        key=lambda c: (round(_rule_spread([r for r, _ in c[1]]), 12), tuple(k for _, k in c[1])),
    )


def _product_search(tables, stat, eps, tau_star):
    """All threshold tuples; feasible when the stat spread is <= eps."""
    stats = [t.rates()[stat] for t in tables]
    utils = [t.utility() for t in tables]
    n = len(tables)
    grids = np.meshgrid(*[np.arange(len(t.rules)) for t in tables], indexing="ij")
    idx = [g.ravel() for g in grids]
    svals = np.stack([stats[i][idx[i]] for i in range(n)])
    total = sum(utils[i][idx[i]] for i in range(n))
    ok = np.all(np.isfinite(svals), axis=0) & (svals.max(0) - svals.min(0) <= eps + FEAS_TOL)
    if not ok.any():
        return None
    rounded = np.round(total, 12)
    best = rounded[ok].max()
    winners = np.flatnonzero(ok & (rounded == best))
    keys = [t.keys(tau_star) for t in tables]
    cands = [
        (float(total[w]), [(tables[i].rules[idx[i][w]], keys[i][idx[i][w]]) for i in range(n)])
        for w in winners
    ]
    return _pick(cands, tau_star)


def _target_search(tables, stats, eps, grid, allowed, tau_star):
    """Target search: each cell's stats within eps/2 of a common grid target.

    The objective is a sum over cells and, for a fixed target, feasibility is
    per cell, so each cell's best rule per target is taken independently.
    ``allowed(cell_index, rules)`` gives a (rules x grid) mask on the first
    target coordinate (direction filter).
    """
    half = eps / 2
    g = grid.size
    big = np.iinfo(np.int64).max
    best_rank, ranked, utils, all_keys = [], [], [], []
    for ci, t in enumerate(tables):
        r = t.rates()
        utils.append(t.utility())
        ut = np.round(utils[-1], 12)
        keys = t.keys(tau_star)
        all_keys.append(keys)
        # rank 0 = most preferred: highest utility, then smallest key
        cols = np.array(keys, float).T
        order = np.lexsort((*cols[::-1], -ut))
        rank = np.empty(len(order), np.int64)
        rank[order] = np.arange(len(order))
        cover = [np.abs(r[s][:, None] - grid[None, :]) <= half + FEAS_TOL for s in stats]
        cover[0] &= allowed(ci, t.rules)
        if len(stats) == 1:
            table = np.where(cover[0], rank[:, None], big).min(0)
        else:
            table = np.full((g, g), big)
            for ja in range(g):
                sub = np.flatnonzero(cover[0][:, ja])
                if sub.size:
                    table[ja] = np.where(cover[1][sub], rank[sub, None], big).min(0)
        best_rank.append(table.ravel())
        ranked.append(np.asarray(order))
    ok = np.all([b != big for b in best_rank], axis=0)
    if not ok.any():
        return None, None
    cands = []
    for target in np.flatnonzero(ok):
        picks = [ranked[c][best_rank[c][target]] for c in range(len(tables))]
        total = float(sum(utils[c][i] for c, i in enumerate(picks)))
        keyed = [(tables[c].rules[i], all_keys[c][i]) for c, i in enumerate(picks)]
        cands.append((total, keyed, int(target)))
    chosen = _pick([(c[0], c[1]) for c in cands], tau_star)
    target = next(c[2] for c in cands if c[1] is chosen[1])
    return chosen, target


def _randomized_rules(grid, tau_star):
    thresholds = sorted(set(grid.tolist()) | {tau_star})
    rules = [(Direction.ABOVE, t, t, 0.0) for t in thresholds]
    mixes = grid[1:-1].tolist()
    for t in thresholds:
        for m in mixes:
            rules.append((Direction.ABOVE, min(0.0, t), t, m))
            rules.append((Direction.ABOVE, t, max(1.0, t), m))
    return rules


def brute_force_optimum(
    baselines: Sequence[BaselineDistribution],
    weights,
    u: UtilityParams,
    constraint: FairnessConstraint,
    resolution: float = 0.005,
):
    """Exhaustive grid search; returns (DecisionRule, per-capita utility)."""
    if resolution < 0.001 - 1e-15 or resolution > 0.1:
        raise SchemaError("oracle resolution must lie in [0.001, 0.1]")
    if u.alpha + u.beta <= 0:
        raise SchemaError("oracle covers the alpha + beta > 0 regime only")
    k = int(round(1 / resolution))
    grid = np.array([j / k for j in range(k + 1)])
    tau_star = (u.beta + u.gamma) / (u.alpha + u.beta)
    thresholds = sorted(set(grid.tolist()) | {tau_star})
    crit = constraint.criterion
    eps = constraint.epsilon

    stratified = crit is Criterion.CONDITIONAL_STATISTICAL_PARITY
    cells = sorted(
        [b for b in baselines if (b.stratum is not None) == stratified],
        key=lambda b: (b.group, b.stratum or ""),
    )
    if len(cells) > 3 * (1 if not stratified else len({b.stratum for b in cells})):
        raise SchemaError("oracle supports at most 3 groups")
    shares = _weights(cells, weights)
    if stratified and constraint.strata is not None:
        keep = [i for i, b in enumerate(cells) if b.stratum in constraint.strata]
        cells = [cells[i] for i in keep]
        total = sum(shares[i] for i in keep)
        shares = [shares[i] / total for i in keep]

    above = [(Direction.ABOVE, t, t, 0.0) for t in thresholds]
    below = [(Direction.BELOW, t, t, 0.0) for t in thresholds]
    chosen_rules = []

    if stratified:
        total = 0.0
        for s in sorted({b.stratum for b in cells}):
            idx = [i for i, b in enumerate(cells) if b.stratum == s]
            tables = [_table(cells[i], shares[i], u, above) for i in idx]
            picked = _product_search(tables, "acceptance", eps, tau_star)
            if picked is None:
                raise Infeasible(f"oracle: no feasible tuple in stratum {s!r}")
            total += picked[0]
            chosen_rules += [(cells[i], r) for i, (r, _) in zip(idx, picked[1])]
    elif crit in (Criterion.INDEPENDENCE, Criterion.EQUAL_OPPORTUNITY, Criterion.PREDICTIVE_EQUALITY):
        stat = {"independence": "acceptance", "equal_opportunity": "tpr", "predictive_equality": "fpr"}[crit.value]
        tables = [_table(b, s, u, above) for b, s in zip(cells, shares)]
        picked = _product_search(tables, stat, eps, tau_star)
        if picked is None:
            raise Infeasible("oracle: no feasible tuple")
        total = picked[0]
        chosen_rules = [(b, r) for b, (r, _) in zip(cells, picked[1])]
    else:
        if crit in (Criterion.PREDICTIVE_PARITY, Criterion.FOR_PARITY):
            stats = ("ppv",) if crit is Criterion.PREDICTIVE_PARITY else ("for",)
            rules = above + below

            def allowed(ci, rules):
                base = cells[ci].base_rate
                if crit is Criterion.PREDICTIVE_PARITY:
                    want_below = grid < base
                else:
                    want_below = grid > base
                is_below = np.array([r[0] is Direction.BELOW for r in rules])
                return is_below[:, None] == want_below[None, :]
        else:
            stats = ("tpr", "fpr") if crit is Criterion.EQUALIZED_ODDS else ("ppv", "for")
            rules = _randomized_rules(grid, tau_star)

            def allowed(ci, rules):
                return np.ones((len(rules), grid.size), bool)

        tables = [_table(b, s, u, rules) for b, s in zip(cells, shares)]
        picked, _ = _target_search(tables, stats, eps, grid, allowed, tau_star)
        if picked is None:
            raise Infeasible("oracle: no feasible target")
        total = picked[0]
        chosen_rules = [(b, r) for b, (r, _) in zip(cells, picked[1])]

    rule = DecisionRule(
        tuple(
            GroupRule(b.group, lo, hi, mix, direction, b.stratum)
            for b, (direction, lo, hi, mix) in chosen_rules
        )
    )
    return rule, u.gamma + total


def incompatibility_witness(
    baselines: Sequence[BaselineDistribution],
    epsilon: float = 0.01,
    resolution: float = 0.005,
    min_share: float = 0.0,
) -> list[tuple]:
    """Deterministic threshold tuples meeting equalized odds and predictive
    parity at once.

    Exhaustive over accept-above and accept-below thresholds on the grid.
    Tuples where some group accepts or rejects no more than ``min_share`` of
    its mass count as degenerate and are skipped (by default: accept-all and
    reject-all). An empty list means the
    two criteria are incompatible on this instance at this tolerance.
    """
    k = int(round(1 / resolution))
    grid = [j / k for j in range(k + 1)]
    u = UtilityParams(1.0, 1.0, 0.0)
    rules = [(d, t, t, 0.0) for d in (Direction.ABOVE, Direction.BELOW) for t in grid]
    tables = [_table(b, 1.0, u, rules) for b in baselines]
    rates = [t.rates() for t in tables]
    usable = [
        np.flatnonzero((r["acceptance"] > min_share + FEAS_TOL) & (r["acceptance"] < 1 - min_share - FEAS_TOL))
        for r in rates
    ]
    found = []
    for combo in itertools.product(*usable):
        ok = True
        for stat in ("tpr", "fpr", "ppv"):
            vals = [rates[i][stat][j] for i, j in enumerate(combo)]
            if not np.all(np.isfinite(vals)) or max(vals) - min(vals) > epsilon + FEAS_TOL:
                ok = False
                break
        if ok:
            found.append(tuple((rules[j][0].value, rules[j][1]) for j in combo))
    return found
