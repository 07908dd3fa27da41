"""Acceptance suite: one test per primary criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (or ``python tests/test_acceptance.py``).
"""

import filecmp
import json
import random
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import beta_baseline, make
from fairdecide import io
from fairdecide.baseline import estimate_baseline
from fairdecide.calibration import GLOBAL, calibrate_instances, calibration_error, fit_calibration
from fairdecide.cli import main
from fairdecide.errors import Infeasible
from fairdecide.metrics import COMPONENTS, Criterion, FairnessConstraint, audit
from fairdecide.optimizer import (
    DecisionRule,
    GroupRule,
    UtilityParams,
    evaluate_utility,
    optimize_constrained,
    optimize_unconstrained,
)
from fairdecide.protocol import DeliverableBundle
from fairdecide.testkit import (
    GroupSpec,
    StratumSpec,
    SyntheticSpec,
    brute_force_metrics,
    brute_force_optimum,
    generate_population,
    incompatibility_witness,
)


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return emit


# --------------------------------------------------------------------------
# 1. closed-form threshold against grid search


def test_criterion_1_closed_form_threshold(verdict):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    grid = np.arange(1001) / 1000
    worst_tau, worst_gain, draws = 0.0, -np.inf, 0
    while draws < 1000:
        alpha, beta = rng.uniform(-2, 5, 2)
        if alpha + beta <= 0.05:
            continue
        draws += 1
        u = UtilityParams(float(alpha), float(beta), float(rng.uniform(-2, 2)))
        shapes = rng.uniform(0.5, 6, 4)
        bs = [beta_baseline("a", *shapes[:2], bins=50), beta_baseline("b", *shapes[2:], bins=50)]
        res = optimize_unconstrained(bs, None, u)
        tau = (u.beta + u.gamma) / (u.alpha + u.beta)
        worst_tau = max(worst_tau, max(abs(e.tau_lo - tau) for e in res.rule.entries))
        # grid thresholds between the same two midpoints accept the same bins;
        # one evaluation per class is exact
        mids = bs[0].midpoints
        cls = np.searchsorted(mids, grid, side="left")
        best = -np.inf
        for c in np.unique(cls):
            t = float(grid[cls == c][0])
            rule = DecisionRule((GroupRule.threshold("a", t), GroupRule.threshold("b", t)))
            best = max(best, evaluate_utility(rule, bs, None, u))
        worst_gain = max(worst_gain, best - res.expected_utility)
    elapsed = time.perf_counter() - start
    ok = worst_tau <= 1e-12 and worst_gain <= 1e-12 and elapsed < 10
    verdict(1, ok, f"max |tau - closed form| {worst_tau:.1e}, max grid gain {worst_gain:.1e}, {elapsed:.1f}s")


# --------------------------------------------------------------------------
# 2. constrained optimum against the exhaustive oracle


def _population_baselines(seed):
    rng = np.random.default_rng(seed)
    sh = rng.uniform(1, 6, 8)
    spec = SyntheticSpec(
        (
            GroupSpec("a", 10000, sh[0], sh[1], strata=(StratumSpec("x", 0.5, sh[0], sh[1]), StratumSpec("z", 0.5, sh[2], sh[3]))),
            GroupSpec("b", 10000, sh[4], sh[5], strata=(StratumSpec("x", 0.4, sh[4], sh[5]), StratumSpec("z", 0.6, sh[6], sh[7]))),
        ),
        seed=seed,
    )
    # identity distortion: the true probability is the calibrated probability
    pop = [replace(i, calibrated_p=i.raw_score) for i in generate_population(spec)]
    return [estimate_baseline(pop, g) for g in "ab"] + [
        estimate_baseline(pop, g, stratum=s) for g in "ab" for s in "xz"
    ]


def test_criterion_2_oracle_equivalence(verdict):
    u = UtilityParams(1, 1, 0.1)
    start = time.perf_counter()
    worst_diff, worst_gap, compared, problems = 0.0, 0.0, 0, []
    for seed in range(20):
        bs = _population_baselines(seed)
        for criterion in Criterion:
            c = FairnessConstraint(criterion, 0.01)
            try:
                res = optimize_constrained(bs, None, u, c)
            except Infeasible:
                res = None
            try:
                _, oracle = brute_force_optimum(bs, None, u, c)
            except Infeasible:
                oracle = None
            if (res is None) != (oracle is None):
                problems.append(f"seed {seed} {criterion.value}: feasibility differs")
                continue
            if res is None:
                continue
            compared += 1
            worst_diff = max(worst_diff, abs(res.expected_utility - oracle))
            worst_gap = max(worst_gap, max(res.achieved_gaps[k] for k in COMPONENTS[criterion]))
    elapsed = time.perf_counter() - start
    ok = not problems and worst_diff <= 1e-9 and worst_gap <= 0.01 + 0.01 and elapsed < 120
    detail = f"{compared} optima, max utility diff {worst_diff:.1e}, max gap {worst_gap:.4f}, {elapsed:.0f}s"
    verdict(2, ok, "; ".join([detail, *problems[:3]]))


# --------------------------------------------------------------------------
# 3. metrics against the counting oracle


def test_criterion_3_metric_oracle(verdict):
    rnd = random.Random(3)
    mismatches = 0
    for _ in range(1000):
        n = rnd.randint(1, 200)
        groups = [f"g{k}" for k in range(rnd.randint(1, 3))]
        strata = rnd.choice([None, ("x",), ("x", "y")])
        rows = []
        for _ in range(n):
            row = (rnd.choice(groups), rnd.randint(0, 1), rnd.randint(0, 1))
            rows.append(row + ((rnd.choice(strata),) if strata else ()))
        inst = make(rows)
        report = audit(inst)
        oracle = brute_force_metrics(inst)
        seen = {(u.component, u.group, u.condition, u.stratum) for u in report.undefined}
        if report.gaps != oracle.gaps or seen != oracle.undefined:
            mismatches += 1
    verdict(3, mismatches == 0, f"{mismatches} mismatches over 1000 populations")


# --------------------------------------------------------------------------
# 4. dominance and nesting on simulated runs


def _sim_config(path, criterion, seed):
    groups = [
        {"name": "a", "size": 3000, "a": 2, "b": 5,
         "strata": [{"name": "x", "share": 0.5, "a": 2, "b": 5}, {"name": "z", "share": 0.5, "a": 3, "b": 3}]},
        {"name": "b", "size": 2000, "a": 5, "b": 2,
         "strata": [{"name": "x", "share": 0.4, "a": 5, "b": 2}, {"name": "z", "share": 0.6, "a": 2, "b": 2}]},
    ]
    doc = {"mode": "fairness", "criterion": criterion, "gamma": 0.1, "seed": seed, "synthetic": {"groups": groups}}
    path.write_text(json.dumps(doc))
    return path


def test_criterion_4_dominance_and_nesting(verdict, tmp_path, capsys):
    slack = 0.005
    runs, problems = 0, []
    for criterion in Criterion:
        for seed in (1, 2):
            run = tmp_path / f"{criterion.value}-{seed}"
            cfg = _sim_config(tmp_path / f"{criterion.value}-{seed}.json", criterion.value, seed)
            if main(["simulate", "--config", str(cfg), "--run-dir", str(run)]) != 0:
                problems.append(f"{run.name}: simulate failed")
                continue
            if main(["report", "--config", str(cfg), "--run-dir", str(run)]) != 0:
                problems.append(f"{run.name}: report failed")
                continue
            runs += 1
            result = json.loads((run / "result.json").read_text())
            if result["expected_utility_per_capita"] > result["unconstrained_utility"] + 1e-12:
                problems.append(f"{run.name}: constrained above unconstrained")
            lines = (run / "eps_sweep.csv").read_text().splitlines()[1:]
            utils = [float(line.split(",")[1]) if line.split(",")[1] else -np.inf for line in lines]
            free = float(lines[0].split(",")[2])
            if any(b < a - slack for a, b in zip(utils, utils[1:])) or max(utils) > free + 1e-12:
                problems.append(f"{run.name}: sweep {utils}")
    capsys.readouterr()
    verdict(4, not problems, f"{runs} simulated runs checked" + ("; " + "; ".join(problems[:3]) if problems else ""))


# --------------------------------------------------------------------------
# 5. incompatibility witness


def _calibrated_baselines(a_shape, b_shape, seed=5):
    # raw scores are a monotone distortion of p; a 10-bin group calibration
    # recovers p coarsely, so the calibrated scorer is imperfect
    spec = SyntheticSpec((GroupSpec("a", 10000, *a_shape, distortion=1.5), GroupSpec("b", 10000, *b_shape, distortion=1.5)), seed=seed)
    pop = generate_population(spec)
    cal = calibrate_instances(pop, {g: fit_calibration(pop, g, 10) for g in "ab"})
    return [estimate_baseline(cal, g) for g in "ab"]


def test_criterion_5_incompatibility_witness(verdict):
    bs = _calibrated_baselines((3, 7), (6, 4))
    rates = [round(b.base_rate, 3) for b in bs]
    found = incompatibility_witness(bs, epsilon=0.01, resolution=0.005)
    # control: equal base rates through the same pipeline do admit pairs
    control = incompatibility_witness(_calibrated_baselines((3, 7), (3, 7)), epsilon=0.01, resolution=0.005)
    ok = not found and bool(control)
    verdict(5, ok, f"base rates {rates}: {len(found)} satisfying pairs; equal-rate control: {len(control)}")


# --------------------------------------------------------------------------
# 6. protocol gate


def test_criterion_6_protocol_gate(verdict, tmp_path, capsys):
    pop = generate_population(SyntheticSpec((GroupSpec("a", 1500, 2, 5), GroupSpec("b", 1000, 5, 2)), seed=6))
    io.write_instances(tmp_path / "population.csv", pop)
    run = ["--run-dir", str(tmp_path)]
    fair = ["--mode", "fairness", "--criterion", "equalized_odds", "--gamma", "0.1"]
    assert main(["calibrate", *run]) == 0
    capsys.readouterr()
    code = main(["optimize", *fair, *run])
    listed = {line.split("missing: ", 1)[1] for line in capsys.readouterr().err.splitlines() if "missing: " in line}
    want = {"group-specific calibration functions", "group-specific baseline distributions"}

    # supply both deliverables to the same bundle and retry
    bundle = DeliverableBundle.from_dict(io.load_json(tmp_path / "bundle.json"))
    cal = calibrate_instances(pop, {g: fit_calibration(pop, g) for g in "ab"})
    bundle = replace(
        bundle,
        groups=("a", "b"),
        calibration=bundle.calibration + tuple(fit_calibration(pop, g) for g in "ab"),
        baselines=bundle.baselines + tuple(estimate_baseline(cal, g) for g in "ab"),
    )
    io.dump_json(tmp_path / "bundle.json", bundle.to_dict())
    cleared = main(["optimize", *fair, *run])
    capsys.readouterr()
    ok = code == 4 and listed == want and cleared == 0
    verdict(6, ok, f"exit {code} listing {sorted(listed)}; with both supplied exit {cleared}")


# --------------------------------------------------------------------------
# 7. calibration contract


def test_criterion_7_calibration_contract(verdict):
    pop = generate_population(SyntheticSpec((GroupSpec("g", 50000, 2, 3),), seed=7))
    fit_half, held_out = pop[::2], pop[1::2]
    fn = fit_calibration(fit_half, GLOBAL)
    ece = calibration_error(fn, held_out).expected_calibration_error
    two = generate_population(SyntheticSpec((GroupSpec("a", 3000, 2, 5), GroupSpec("b", 2000, 5, 2)), seed=8))
    same = all(
        fit_calibration(two, g) == replace(fit_calibration([i for i in two if i.group == g], GLOBAL), group_scope=g)
        for g in "ab"
    )
    verdict(7, ece <= 0.02 and same, f"held-out ECE {ece:.4f}; group fits equal single-group global fits: {same}")


# --------------------------------------------------------------------------
# 8. determinism


def _tree(root: Path):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_criterion_8_determinism(verdict, tmp_path, capsys):
    cfg = _sim_config(tmp_path / "cfg.json", "equalized_odds", 8)
    one, two = tmp_path / "one", tmp_path / "two"
    codes = [main(["simulate", "--config", str(cfg), "--run-dir", str(d)]) for d in (one, two)]
    capsys.readouterr()
    files = _tree(one)
    same_names = files == _tree(two)
    _, mismatch, errors = filecmp.cmpfiles(one, two, [str(f) for f in files], shallow=False)
    ok = codes == [0, 0] and same_names and not mismatch and not errors
    verdict(8, ok, f"{len(files)} files, {len(mismatch) + len(errors)} differ")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
