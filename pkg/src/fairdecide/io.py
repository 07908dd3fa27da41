"""CSV instance tables and JSON documents for the persisted artifacts."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

from .baseline import BaselineDistribution, Direction
from .calibration import CalibrationBin, CalibrationFunction, CalibrationReport
from .errors import InvalidInstance, MissingArtifact, SchemaError
from .instances import LabeledInstance
from .metrics import FairnessConstraint, GapReport
from .optimizer import DecisionRule, GroupRule, OptimizationResult

SCHEMA_VERSION = 1
COLUMNS = ("id", "score", "group", "y", "stratum", "p_hat", "decision")
DEFAULT_GROUP = "all"


# --------------------------------------------------------------------------
# CSV


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(f"line {line}, column {column!r}: {text!r} is not a number") from None
    if not math.isfinite(value):
        raise SchemaError(f"line {line}, column {column!r}: value must be finite")
    return value


def _parse_binary(text: str, line: int, column: str) -> int:
    if text not in ("0", "1"):
        raise SchemaError(f"line {line}, column {column!r}: expected 0 or 1, got {text!r}")
    return int(text)


def read_instances(path, require: Sequence[str] = ()) -> list[LabeledInstance]:
    """Read an instance table. Columns in ``require`` must exist and be filled."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"instance table {path} not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in ("id", "score", *require):
            if column not in header:
                raise SchemaError(f"{path.name}: missing column {column!r}")
        unknown = [c for c in header if c not in COLUMNS]
        if unknown:
            raise SchemaError(f"{path.name}: unknown column(s) {unknown}")
        out, seen = [], set()
        for line, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise SchemaError(f"{path.name} line {line}: wrong number of fields")
            cells = {k: v.strip() for k, v in row.items()}
            for column in require:
                if cells.get(column, "") == "":
                    raise SchemaError(f"{path.name} line {line}: empty {column!r}")
            ident = cells["id"]
            if not ident:
                raise SchemaError(f"{path.name} line {line}: empty 'id'")
            if ident in seen:
                raise SchemaError(f"{path.name} line {line}: duplicate id {ident!r}")
            seen.add(ident)
            try:
                out.append(
                    LabeledInstance(
                        id=ident,
                        raw_score=_parse_float(cells["score"], line, "score"),
                        group=cells.get("group") or DEFAULT_GROUP,
                        outcome=_parse_binary(cells["y"], line, "y") if cells.get("y") else None,
                        stratum=cells.get("stratum") or None,
                        decision=(
                            _parse_binary(cells["decision"], line, "decision")
                            if cells.get("decision")
                            else None
                        ),
                        calibrated_p=(
                            _parse_float(cells["p_hat"], line, "p_hat") if cells.get("p_hat") else None
                        ),
                    )
                )
            except InvalidInstance as exc:
                raise SchemaError(f"{path.name} line {line}: {exc}") from None
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_instances(path, instances: Iterable[LabeledInstance]) -> None:
    instances = list(instances)
    optional = {
        "y": "outcome",
        "stratum": "stratum",
        "p_hat": "calibrated_p",
        "decision": "decision",
    }
    columns = ["id", "score", "group"] + [
        col for col, attr in optional.items() if any(getattr(i, attr) is not None for i in instances)
    ]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for inst in instances:
            row = [inst.id, _fmt(inst.raw_score), inst.group]
            row += [_fmt(getattr(inst, optional[c])) for c in columns[3:]]
            writer.writerow(row)


# --------------------------------------------------------------------------
# JSON


def dump_json(path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"{path} not found")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path.name} line {exc.lineno}: {exc.msg}") from None


def _field(doc: dict, name: str, where: str):
    if name not in doc:
        raise SchemaError(f"{where}: missing field {name!r}")
    return doc[name]


def calibration_to_dict(fn: CalibrationFunction) -> dict:
    return {
        "kind": "calibration_function",
        "group_scope": fn.group_scope,
        "bin_edges": list(fn.bin_edges),
        "bin_values": list(fn.bin_values),
        "fit_count": list(fn.fit_count),
    }


def calibration_from_dict(doc: dict) -> CalibrationFunction:
    w = "calibration function"
    return CalibrationFunction(
        group_scope=str(_field(doc, "group_scope", w)),
        bin_edges=tuple(float(x) for x in _field(doc, "bin_edges", w)),
        bin_values=tuple(float(x) for x in _field(doc, "bin_values", w)),
        fit_count=tuple(int(x) for x in _field(doc, "fit_count", w)),
    )


def calibration_report_to_dict(report: CalibrationReport) -> dict:
    return {
        "group_scope": report.group_scope,
        "expected_calibration_error": report.expected_calibration_error,
        "count": report.count,
        "bins": [
            None if b is None else {"mean_score": b.mean_score, "frequency": b.frequency, "count": b.count}
            for b in report.bins
        ],
    }


def calibration_report_from_dict(doc: dict) -> CalibrationReport:
    w = "calibration report"
    return CalibrationReport(
        group_scope=str(_field(doc, "group_scope", w)),
        expected_calibration_error=float(_field(doc, "expected_calibration_error", w)),
        bins=tuple(
            None if b is None else CalibrationBin(float(b["mean_score"]), float(b["frequency"]), int(b["count"]))
            for b in _field(doc, "bins", w)
        ),
        count=int(_field(doc, "count", w)),
    )


def baseline_to_dict(b: BaselineDistribution) -> dict:
    return {
        "kind": "baseline_distribution",
        "group": b.group,
        "stratum": b.stratum,
        "mass": list(b.mass),
        "count": b.count,
        "base_rate": b.base_rate,
        "base_rate_source": b.base_rate_source,
    }


def baseline_from_dict(doc: dict) -> BaselineDistribution:
    w = "baseline distribution"
    return BaselineDistribution(
        group=str(_field(doc, "group", w)),
        mass=tuple(float(x) for x in _field(doc, "mass", w)),
        count=int(_field(doc, "count", w)),
        base_rate=float(_field(doc, "base_rate", w)),
        base_rate_source=str(doc.get("base_rate_source", "outcomes")),
        stratum=doc.get("stratum"),
    )


def rule_to_dict(rule: DecisionRule) -> dict:
    return {
        "kind": "decision_rule",
        "version": SCHEMA_VERSION,
        "randomized": rule.randomized,
        "entries": [
            {
                "group": e.group,
                "stratum": e.stratum,
                "direction": e.direction.value,
                "tau_lo": e.tau_lo,
                "tau_hi": e.tau_hi,
                "mix": e.mix,
            }
            for e in rule.entries
        ],
    }


def rule_from_dict(doc: dict) -> DecisionRule:
    entries = []
    for i, e in enumerate(_field(doc, "entries", "decision rule")):
        w = f"decision rule entry {i}"
        try:
            direction = Direction(e.get("direction", Direction.ABOVE.value))
        except ValueError:
            raise SchemaError(f"{w}: unknown direction {e.get('direction')!r}") from None
        entries.append(
            GroupRule(
                group=str(_field(e, "group", w)),
                tau_lo=float(_field(e, "tau_lo", w)),
                tau_hi=float(_field(e, "tau_hi", w)),
                mix=float(e.get("mix", 0.0)),
                direction=direction,
                stratum=e.get("stratum"),
            )
        )
    return DecisionRule(tuple(entries))


def constraint_to_dict(c: FairnessConstraint | None):
    if c is None:
        return None
    return {
        "criterion": c.criterion.value,
        "epsilon": c.epsilon,
        "strata": None if c.strata is None else list(c.strata),
    }


def result_to_dict(result: OptimizationResult) -> dict:
    return {
        "kind": "optimization_result",
        "version": SCHEMA_VERSION,
        "rule": rule_to_dict(result.rule),
        "expected_utility_per_capita": result.expected_utility,
        "unconstrained_utility": result.unconstrained_utility,
        "cost_of_fairness": result.cost_of_fairness,
        "achieved_gaps": dict(result.achieved_gaps),
        "binding": dict(result.binding),
        "search_trace": dict(result.search_trace),
        "constraint": constraint_to_dict(result.constraint),
        "warnings": list(result.warnings),
    }


def gap_report_to_dict(report: GapReport) -> dict:
    return {
        "kind": "gap_report",
        "version": SCHEMA_VERSION,
        "gaps": dict(report.gaps),
        "passed": dict(report.passed),
        "pass": report.ok,
        "constraint": constraint_to_dict(report.constraint),
        "rates": {
            g: {
                "count": r.count,
                "acceptance": r.acceptance,
                "tpr": r.tpr,
                "fpr": r.fpr,
                "ppv": r.ppv,
                "for": r.for_rate,
                "base_rate": r.base_rate,
            }
            for g, r in report.rates.items()
        },
        "warnings": report.warnings,
    }
