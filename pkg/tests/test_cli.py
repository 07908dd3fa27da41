import csv
import json

import pytest

from fairdecide import io
from fairdecide.baseline import expected_rate_curves
from fairdecide.cli import main
from fairdecide.instances import LabeledInstance
from fairdecide.testkit import GroupSpec, SyntheticSpec, generate_population

GROUPS = (GroupSpec("a", 1500, 2, 5), GroupSpec("b", 1000, 5, 2))


@pytest.fixture
def run(tmp_path):
    io.write_instances(tmp_path / "population.csv", generate_population(SyntheticSpec(GROUPS, seed=3)))
    return tmp_path


def cli(run, *args):
    return main([*args, "--run-dir", str(run)])


def fair(*extra):
    return ("--mode", "fairness", "--criterion", "independence", "--gamma", "0.1", *extra)


def test_calibrate_unconstrained_writes_global_function(run):
    assert cli(run, "calibrate") == 0
    assert sorted(p.name for p in (run / "calibration").iterdir()) == ["global.json"]
    bundle = json.loads((run / "bundle.json").read_text())
    assert bundle["bundle_mode"] == "unconstrained"


def test_calibrate_fairness_writes_one_function_per_group(run):
    assert cli(run, "calibrate", *fair()) == 0
    assert sorted(p.name for p in (run / "calibration").iterdir()) == ["group-a.json", "group-b.json"]


def test_missing_outcome_column(run, capsys):
    (run / "nolabels.csv").write_text("id,score,group\n1,0.2,a\n2,0.7,b\n")
    assert cli(run, "calibrate", "--input", "nolabels.csv") == 2
    assert "'y'" in capsys.readouterr().err


def test_bad_value_names_row_and_column(run, capsys):
    (run / "bad.csv").write_text("id,score,group,y\n1,0.2,a,1\n2,high,b,0\n")
    assert cli(run, "calibrate", "--input", "bad.csv") == 2
    err = capsys.readouterr().err
    assert "line 3" in err and "score" in err


def test_insufficient_data_exit_3(run):
    (run / "tiny.csv").write_text("id,score,group,y\n1,0.2,a,1\n2,0.7,a,0\n")
    assert cli(run, "calibrate", "--input", "tiny.csv") == 3


def test_optimize_gate_exit_4(run, capsys):
    assert cli(run, "calibrate") == 0
    capsys.readouterr()
    assert cli(run, "optimize", *fair()) == 4
    err = capsys.readouterr().err
    assert "missing: group-specific calibration functions" in err
    assert "missing: group-specific baseline distributions" in err


def test_optimize_infeasible_exit_5(run):
    assert cli(run, "calibrate", *fair()) == 0
    bundle = json.loads((run / "bundle.json").read_text())
    # pin each group to a single probability so predictive values cannot meet
    for b, hot in zip(bundle["baselines"], (1, 8)):
        b["mass"] = [1.0 if i == hot else 0.0 for i in range(len(b["mass"]))]
    (run / "bundle.json").write_text(json.dumps(bundle))
    assert cli(run, "optimize", "--mode", "fairness", "--criterion", "predictive_parity", "--epsilon", "0") == 5


def test_vacuous_epsilon_matches_unconstrained_rule(run):
    assert cli(run, "calibrate", *fair()) == 0
    assert cli(run, "optimize", "--gamma", "0.1") == 0
    free = json.loads((run / "rule.json").read_text())
    assert cli(run, "optimize", *fair("--epsilon", "1")) == 0
    constrained = json.loads((run / "rule.json").read_text())
    assert constrained == free


def test_apply_is_idempotent_and_thresholds(run):
    assert cli(run, "calibrate", *fair()) == 0
    assert cli(run, "optimize", *fair()) == 0
    assert cli(run, "apply", "--seed", "5") == 0
    first = (run / "decisions.csv").read_bytes()
    assert cli(run, "apply", "--seed", "5") == 0
    assert (run / "decisions.csv").read_bytes() == first


def test_apply_deterministic_rule_and_unknown_group(run):
    io.write_instances(run / "cal.csv", [LabeledInstance("x", 0.7, "g", calibrated_p=0.7)])
    rule = {"kind": "decision_rule", "entries": [{"group": "g", "tau_lo": 0.5, "tau_hi": 0.5}]}
    (run / "r.json").write_text(json.dumps(rule))
    assert cli(run, "apply", "--rule", "r.json", "--calibrated", "cal.csv", "--decisions", "d.csv") == 0
    assert [i.decision for i in io.read_instances(run / "d.csv")] == [1]
    io.write_instances(run / "cal.csv", [LabeledInstance("x", 0.7, "h", calibrated_p=0.7)])
    assert cli(run, "apply", "--rule", "r.json", "--calibrated", "cal.csv", "--decisions", "d.csv") == 6


def write_decisions(path, rows):
    io.write_instances(path, [LabeledInstance(f"i{k}", 0.5, g, outcome=y, decision=d) for k, (g, d, y) in enumerate(rows)])


def test_audit_exit_codes(run):
    write_decisions(run / "perfect.csv", [(g, y, y) for g in "ab" for y in (0, 1, 1, 0)])
    assert cli(run, "audit", "--decisions", "perfect.csv", "--mode", "fairness",
               "--criterion", "equalized_odds", "--epsilon", "0") == 0
    rows = [("0", d, 0) for d in (1, 1, 0, 0)] + [("1", d, 0) for d in (1, 0, 0, 0)]
    write_decisions(run / "rates.csv", rows)
    assert cli(run, "audit", "--decisions", "rates.csv", "--mode", "fairness",
               "--criterion", "independence", "--epsilon", "0.1") == 1
    audit_doc = json.loads((run / "audit.json").read_text())
    assert audit_doc["gaps"]["acceptance"] == 0.25
    (run / "nolabel.csv").write_text("id,score,group,decision\n1,0.5,a,1\n2,0.5,b,0\n")
    assert cli(run, "audit", "--decisions", "nolabel.csv", "--mode", "fairness",
               "--criterion", "equalized_odds") == 2


def test_report_needs_prior_outputs(tmp_path):
    assert main(["report", "--run-dir", str(tmp_path)]) == 7


def read_rows(path):
    with path.open() as fh:
        return list(csv.DictReader(fh))


def test_report_tables(run):
    assert cli(run, "calibrate", *fair()) == 0
    assert cli(run, "optimize", *fair()) == 0
    assert cli(run, "report", *fair("--resolution", "0.01")) == 0
    sweep = read_rows(run / "eps_sweep.csv")
    utils = [float(r["utility"]) for r in sweep if r["utility"]]
    assert len(utils) == 5 and utils == sorted(utils)
    bundle = io.load_json(run / "bundle.json")
    baselines = {b["group"]: io.baseline_from_dict(b) for b in bundle["baselines"]}
    curves = read_rows(run / "rate_curves.csv")
    for group, tau in (("a", "0.25"), ("b", "0.5"), ("b", "0.9")):
        row = next(r for r in curves if r["group"] == group and r["tau"] == tau)
        want = expected_rate_curves(baselines[group], float(tau))
        for name, value in (("acceptance", want.acceptance), ("tpr", want.tpr), ("ppv", want.ppv), ("for", want.for_rate)):
            assert (float(row[name]) if row[name] else None) == value
    assert not (run / "eps_sweep.png").exists()


def test_report_figures_opt_in(run):
    assert cli(run, "calibrate", *fair()) == 0
    assert cli(run, "optimize", *fair()) == 0
    assert cli(run, "report", *fair("--resolution", "0.05", "--figures")) == 0
    assert (run / "eps_sweep.png").stat().st_size > 0
    assert (run / "rate_curves.png").stat().st_size > 0


def sim_config(path, **extra):
    doc = {
        "mode": "fairness",
        "criterion": "equal_opportunity",
        "gamma": 0.1,
        "seed": 11,
        "synthetic": {"groups": [{"name": "a", "size": 2000, "a": 2, "b": 5},
                                 {"name": "b", "size": 1500, "a": 5, "b": 2}]},
        **extra,
    }
    path.write_text(json.dumps(doc))
    return path


def test_simulate_dominance(tmp_path):
    cfg = sim_config(tmp_path / "cfg.json")
    assert main(["simulate", "--config", str(cfg), "--run-dir", str(tmp_path / "out")]) == 0
    report = json.loads((tmp_path / "out" / "simulation_report.json").read_text())
    opt = report["stages"]["optimize"]
    assert opt["expected_utility_per_capita"] <= opt["unconstrained_utility"] + 1e-12


def test_simulate_symmetric_groups(tmp_path):
    groups = [{"name": "a", "size": 2000, "a": 2, "b": 3}, {"name": "b", "size": 2000, "a": 2, "b": 3}]
    cfg = sim_config(tmp_path / "cfg.json", synthetic={"groups": groups})
    assert main(["simulate", "--config", str(cfg), "--run-dir", str(tmp_path / "out")]) == 0
    rule = json.loads((tmp_path / "out" / "rule.json").read_text())
    # (beta + gamma) / (alpha + beta) with alpha = beta = 1, gamma = 0.1
    assert {(e["tau_lo"], e["tau_hi"]) for e in rule["entries"]} == {(0.55, 0.55)}
    opt = json.loads((tmp_path / "out" / "simulation_report.json").read_text())["stages"]["optimize"]
    assert opt["expected_utility_per_capita"] == pytest.approx(opt["unconstrained_utility"], abs=1e-12)
    assert opt["achieved_gaps"]["tpr"] <= 0.01


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"mode": "fairness",\n "epsilon": }')
    assert main(["calibrate", "--config", str(bad), "--run-dir", str(tmp_path)]) == 2
    bad.write_text('{"colour": 1}')
    assert main(["calibrate", "--config", str(bad), "--run-dir", str(tmp_path)]) == 2
