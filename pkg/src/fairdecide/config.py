"""Run configuration: one JSON document, overridable from the command line."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import SchemaError
from .metrics import Criterion, FairnessConstraint
from .optimizer import UtilityParams
from .protocol import Mode
from .testkit import GroupSpec, StratumSpec, SyntheticSpec


@dataclass
class RunConfig:
    mode: str = "unconstrained"
    criterion: str | None = None
    epsilon: float = 0.01
    strata: list | None = None
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.0
    calibration_bins: int = 10
    baseline_bins: int = 100
    resolution: float = 0.005
    seed: int = 0
    run_dir: str = "."
    input: str = "population.csv"
    calibrated: str = "calibrated.csv"
    decisions: str = "decisions.csv"
    bundle: str = "bundle.json"
    rule: str = "rule.json"
    target_definition: str = "Y=1 when the target event occurs"
    eps_sweep: list = field(default_factory=lambda: [0.0, 0.01, 0.05, 0.1, 1.0])
    figures: bool = False
    synthetic: dict | None = None

    def __post_init__(self):
        try:
            Mode(self.mode)
        except ValueError:
            raise SchemaError(f"config field 'mode': expected unconstrained or fairness, got {self.mode!r}") from None
        if self.criterion:
            Criterion.parse(self.criterion)
        for name in ("epsilon", "alpha", "beta", "gamma", "resolution"):
            try:
                setattr(self, name, float(getattr(self, name)))
            except (TypeError, ValueError):
                raise SchemaError(f"config field {name!r}: expected a number") from None
        for name in ("calibration_bins", "baseline_bins", "seed"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise SchemaError(f"config field {name!r}: expected an integer")
        if not 0.0 <= self.epsilon <= 1.0:
            raise SchemaError("config field 'epsilon': must lie in [0, 1]")
        if not 0.0 < self.resolution <= 0.1:
            raise SchemaError("config field 'resolution': must lie in (0, 0.1]")
        if self.calibration_bins < 1 or self.baseline_bins < 1:
            raise SchemaError("config bin counts must be >= 1")

    @property
    def fairness(self) -> bool:
        return self.mode == Mode.FAIRNESS.value

    @property
    def utility(self) -> UtilityParams:
        return UtilityParams(self.alpha, self.beta, self.gamma)

    def constraint(self, epsilon: float | None = None) -> FairnessConstraint | None:
        if not self.fairness:
            return None
        if not self.criterion:
            raise SchemaError("config field 'criterion' is required in fairness mode")
        return FairnessConstraint(
            Criterion.parse(self.criterion),
            self.epsilon if epsilon is None else epsilon,
            None if self.strata is None else tuple(self.strata),
        )

    def path(self, name: str) -> Path:
        return Path(self.run_dir) / name

    def synthetic_spec(self) -> SyntheticSpec:
        if not self.synthetic or "groups" not in self.synthetic:
            raise SchemaError("config field 'synthetic.groups' is required for simulate")
        groups = []
        for i, g in enumerate(self.synthetic["groups"]):
            try:
                strata = tuple(StratumSpec(**s) for s in g.get("strata", ()))
                groups.append(
                    GroupSpec(
                        name=str(g["name"]),
                        size=int(g["size"]),
                        a=float(g["a"]),
                        b=float(g["b"]),
                        distortion=float(g.get("distortion", 1.0)),
                        strata=strata,
                    )
                )
            except (KeyError, TypeError) as exc:
                raise SchemaError(f"config field 'synthetic.groups[{i}]': {exc}") from None
        return SyntheticSpec(tuple(groups), self.seed)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config (if given) and apply non-None overrides."""
    doc = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise SchemaError(f"config file {path} not found")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path.name} line {exc.lineno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise SchemaError(f"{path.name}: top level must be an object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise SchemaError(f"config: unknown field(s) {unknown}")
    doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**doc)
