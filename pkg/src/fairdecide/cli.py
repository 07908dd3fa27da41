"""Batch command-line interface.

Every command reads a JSON run config (``--config``), takes flag overrides,
and resolves all paths against ``--run-dir``. Exit codes: 0 success or audit
pass, 1 audit fail, 2 schema, 3 data insufficiency, 4 missing deliverable,
5 infeasible, 6 unknown group, 7 missing artifact.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

from . import io
from .baseline import estimate_baseline, expected_rate_curves
from .calibration import GLOBAL, calibrate_instances, fit_calibration
from .config import RunConfig, load_config
from .errors import FairDecideError, Infeasible, MissingArtifact, MissingDeliverable, SchemaError
from .instances import group_ids
from .metrics import audit
from .optimizer import RANDOM_GENERATOR, apply_rule, optimize_constrained
from .protocol import (
    DeliverableBundle,
    Mode,
    Provenance,
    assemble_bundle,
    build_task_spec,
    optimize_from_bundle,
    performance_report,
    validate_bundle,
)
from .testkit import GENERATOR, generate_population, stage_seed

CALIBRATION_DIR = "calibration"
CALIBRATION_REPORT = "calibration_report.json"
TASK = "task.json"
RESULT = "result.json"
AUDIT = "audit.json"
SIM_REPORT = "simulation_report.json"
EPS_SWEEP = "eps_sweep.csv"
RATE_CURVES = "rate_curves.csv"


def _say(*lines):
    for line in lines:
        print(line)


def _fmt(x, digits=6):
    return "undefined" if x is None else f"{x:.{digits}f}"


# --------------------------------------------------------------------------
# Commands


def cmd_calibrate(config: RunConfig) -> int:
    """Fit calibration, estimate baselines, write the task spec and bundle."""
    require = ("y", "group") if config.fairness else ("y",)
    instances = io.read_instances(config.path(config.input), require=require)
    groups = group_ids(instances)
    strata = sorted({i.stratum for i in instances if i.stratum is not None}) or None
    if config.fairness:
        task = build_task_spec(Mode.FAIRNESS, config.target_definition, groups, strata)
        functions = {g: fit_calibration(instances, g, config.calibration_bins) for g in groups}
    else:
        task = build_task_spec(Mode.UNCONSTRAINED, config.target_definition)
        functions = {GLOBAL: fit_calibration(instances, GLOBAL, config.calibration_bins)}
    calibrated = calibrate_instances(instances, functions)

    if config.fairness:
        baselines = [estimate_baseline(calibrated, g, config.baseline_bins) for g in groups]
        if strata and all(i.stratum is not None for i in calibrated):
            present = {(i.group, i.stratum) for i in calibrated}
            baselines += [
                estimate_baseline(calibrated, g, config.baseline_bins, s)
                for g in groups
                for s in strata
                if (g, s) in present
            ]
    else:
        pooled = [replace(i, group=GLOBAL) for i in calibrated]
        baselines = [estimate_baseline(pooled, GLOBAL, config.baseline_bins)]

    performance = performance_report(calibrated, functions)
    bundle = assemble_bundle(
        task,
        config.calibrated,
        functions,
        baselines,
        performance,
        Provenance(config.input, len(calibrated)),
    )
    for scope, fn in functions.items():
        name = "global" if scope == GLOBAL else f"group-{scope}"
        io.dump_json(config.path(f"{CALIBRATION_DIR}/{name}.json"), io.calibration_to_dict(fn))
    io.dump_json(
        config.path(CALIBRATION_REPORT),
        {"reports": [io.calibration_report_to_dict(r) for r in performance.calibration]},
    )
    io.write_instances(config.path(config.calibrated), calibrated)
    io.dump_json(config.path(TASK), task.to_dict())
    io.dump_json(config.path(config.bundle), bundle.to_dict())

    _say(f"calibrated {len(calibrated)} instances ({task.mode.value} mode)")
    for r in performance.calibration:
        _say(f"  scope {r.group_scope}: ECE {_fmt(r.expected_calibration_error, 4)} over {r.count} instances")
    _say(f"  accuracy@0.5 {_fmt(performance.accuracy, 4)}  AUC {_fmt(performance.auc, 4)}")
    return 0


def _load_bundle(config: RunConfig) -> DeliverableBundle:
    return DeliverableBundle.from_dict(io.load_json(config.path(config.bundle)))


def cmd_optimize(config: RunConfig) -> int:
    bundle = _load_bundle(config)
    constraint = config.constraint()
    result = optimize_from_bundle(bundle, config.utility, constraint, config.resolution)
    io.dump_json(config.path(RESULT), io.result_to_dict(result))
    io.dump_json(config.path(config.rule), io.rule_to_dict(result.rule))

    _say("decision rule:")
    for e in result.rule.entries:
        where = e.group if e.stratum is None else f"{e.group}/{e.stratum}"
        if e.tau_lo == e.tau_hi:
            _say(f"  {where}: {e.direction.value} threshold {e.tau_lo:g}")
        else:
            _say(f"  {where}: {e.direction.value} band [{e.tau_lo:g}, {e.tau_hi:g}] mix {e.mix:g}")
    _say(f"expected utility per capita: {_fmt(result.expected_utility)}")
    if constraint is not None:
        _say(
            f"unconstrained utility: {_fmt(result.unconstrained_utility)}",
            f"cost of fairness: {_fmt(result.cost_of_fairness)}",
            f"constraint {constraint.criterion.value} eps={constraint.epsilon:g}",
        )
    for comp, gap in sorted(result.achieved_gaps.items()):
        _say(f"  gap {comp}: {_fmt(gap)}")
    for w in result.warnings:
        _say(f"warning: {w}")
    return 0


def cmd_apply(config: RunConfig) -> int:
    rule = io.rule_from_dict(io.load_json(config.path(config.rule)))
    instances = io.read_instances(config.path(config.calibrated), require=("p_hat",))
    decided = apply_rule(rule, instances, stage_seed(config.seed, "apply"))
    io.write_instances(config.path(config.decisions), decided)
    accepted = sum(i.decision for i in decided)
    _say(f"applied rule to {len(decided)} instances: {accepted} accepted")
    return 0


def cmd_audit(config: RunConfig) -> int:
    instances = io.read_instances(config.path(config.decisions), require=("decision",))
    constraint = config.constraint()
    report = audit(instances, constraint)
    io.dump_json(config.path(AUDIT), io.gap_report_to_dict(report))
    for comp, gap in sorted(report.gaps.items()):
        _say(f"gap {comp}: {_fmt(gap)}")
    for w in report.warnings:
        _say(f"warning: {w}")
    if constraint is None:
        _say("no constraint configured: PASS")
        return 0
    verdict = "PASS" if report.ok else "FAIL"
    _say(f"{constraint.criterion.value} eps={constraint.epsilon:g}: {verdict}")
    return 0 if report.ok else 1


def cmd_simulate(config: RunConfig) -> int:
    """Generate a population and run the whole pipeline on it."""
    run = Path(config.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    summary = {"kind": "simulation_report", "generator": GENERATOR, "draws": RANDOM_GENERATOR, "stages": {}}

    def stage(name, fn):
        try:
            return fn()
        except FairDecideError as exc:
            exc.args = (f"stage {name}: {exc}",)
            raise

    spec = stage("config", config.synthetic_spec)
    spec = replace(spec, seed=stage_seed(config.seed, "population"))
    population = stage("generate", lambda: generate_population(spec))
    io.write_instances(config.path(config.input), population)
    summary["stages"]["generate"] = {"count": len(population), "seed": spec.seed}

    stage("calibrate", lambda: cmd_calibrate(config))
    bundle = _load_bundle(config)
    summary["stages"]["calibrate"] = {
        "accuracy": bundle.performance.accuracy,
        "auc": bundle.performance.auc,
        "ece": {r.group_scope: r.expected_calibration_error for r in bundle.performance.calibration},
    }
    stage("optimize", lambda: cmd_optimize(config))
    summary["stages"]["optimize"] = io.load_json(config.path(RESULT))
    stage("apply", lambda: cmd_apply(config))
    verdict = stage("audit", lambda: cmd_audit(config))
    summary["stages"]["audit"] = io.load_json(config.path(AUDIT))
    summary["config"] = config.to_dict()
    summary["config"]["run_dir"] = "."
    io.dump_json(config.path(SIM_REPORT), summary)
    _say(f"simulation complete: audit {'PASS' if verdict == 0 else 'FAIL'}")
    return 0


def sweep_rows(bundle: DeliverableBundle, config: RunConfig) -> list[dict]:
    """Constrained utility for each epsilon of the sweep (blank if infeasible)."""
    constraint = config.constraint()
    free = optimize_from_bundle(bundle, config.utility, None, config.resolution)
    rows = []
    for eps in sorted(config.eps_sweep):
        utility = None
        if constraint is not None:
            try:
                res = optimize_constrained(
                    bundle.group_baselines() + bundle.stratum_baselines(),
                    None,
                    config.utility,
                    replace(constraint, epsilon=float(eps)),
                    config.resolution,
                )
                utility = res.expected_utility
            except Infeasible:
                pass
        else:
            utility = free.expected_utility
        rows.append({"epsilon": float(eps), "utility": utility, "unconstrained_utility": free.expected_utility})
    return rows


def curve_rows(bundle: DeliverableBundle, resolution: float) -> list[dict]:
    """Per-group accept-above rates on the threshold grid."""
    k = int(round(1 / resolution))
    baselines = bundle.group_baselines() or list(bundle.baselines)
    rows = []
    for b in baselines:
        for j in range(k + 1):
            r = expected_rate_curves(b, j / k)
            rows.append(
                {
                    "group": b.group,
                    "tau": j / k,
                    "acceptance": r.acceptance,
                    "tpr": r.tpr,
                    "fpr": r.fpr,
                    "ppv": r.ppv,
                    "for": r.for_rate,
                }
            )
    return rows


def _write_rows(path: Path, rows: list[dict]):
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: "" if v is None else (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def cmd_report(config: RunConfig) -> int:
    for name in (config.bundle, RESULT):
        if not config.path(name).exists():
            raise MissingArtifact(f"prior output {name} not found in {config.run_dir}")
    bundle = _load_bundle(config)
    sweep = sweep_rows(bundle, config)
    curves = curve_rows(bundle, config.resolution)
    _write_rows(config.path(EPS_SWEEP), sweep)
    _write_rows(config.path(RATE_CURVES), curves)
    _say(f"wrote {EPS_SWEEP} ({len(sweep)} rows) and {RATE_CURVES} ({len(curves)} rows)")
    if config.figures:
        from .plotting import plot_eps_sweep, plot_rate_curves

        plot_eps_sweep(sweep, config.path("eps_sweep.png"))
        plot_rate_curves(curves, config.path("rate_curves.png"))
        _say("wrote eps_sweep.png and rate_curves.png")
    return 0


COMMANDS = {
    "calibrate": cmd_calibrate,
    "optimize": cmd_optimize,
    "apply": cmd_apply,
    "audit": cmd_audit,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


# --------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairdecide", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0] if fn.__doc__ else name)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--run-dir", dest="run_dir")
        p.add_argument("--mode", choices=[m.value for m in Mode])
        p.add_argument("--criterion")
        p.add_argument("--epsilon", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--calibration-bins", dest="calibration_bins", type=int)
        p.add_argument("--baseline-bins", dest="baseline_bins", type=int)
        p.add_argument("--resolution", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--input")
        p.add_argument("--calibrated")
        p.add_argument("--decisions")
        p.add_argument("--bundle")
        p.add_argument("--rule")
        if name == "report":
            p.add_argument("--figures", action="store_true", default=None, help="also render PNG figures")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        config = load_config(args.config, overrides)
        return COMMANDS[args.command](config)
    except MissingDeliverable as exc:
        print(f"error: {exc}", file=sys.stderr)
        for item in exc.missing:
            print(f"  missing: {item}", file=sys.stderr)
        return exc.exit_code
    except FairDecideError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
