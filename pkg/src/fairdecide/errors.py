"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FairDecideError(Exception):
    exit_code = 2


class SchemaError(FairDecideError):
    """Malformed input table, document or configuration."""

    exit_code = 2


class InvalidInstance(SchemaError):
    pass


class MissingDecision(SchemaError):
    pass


class MissingOutcome(SchemaError):
    pass


class MissingStratum(SchemaError):
    pass


class EmptyGroup(FairDecideError):
    exit_code = 3


class NoLabeledData(FairDecideError):
    exit_code = 3


class InsufficientData(FairDecideError):
    exit_code = 3


class UncalibratedInstances(FairDecideError):
    exit_code = 3


class DegenerateUtility(FairDecideError):
    exit_code = 2


class NegativeRegime(FairDecideError):
    """alpha + beta < 0: the accept-above threshold semantics invert."""

    exit_code = 2


class MissingDeliverable(FairDecideError):
    exit_code = 4

    def __init__(self, missing, detail: str | None = None):
        self.missing = list(missing)
        message = "missing deliverables: " + ", ".join(self.missing)
        super().__init__(message if detail is None else f"{message} ({detail})")


class GroupCoverageError(MissingDeliverable):
    pass


class MissingSensitiveAttribute(MissingDeliverable):
    def __init__(self, detail: str | None = None):
        super().__init__(["sensitive attribute A"], detail)


class Infeasible(FairDecideError):
    exit_code = 5


class UnknownGroup(FairDecideError):
    exit_code = 6


class GroupMismatch(UnknownGroup):
    pass


class MissingArtifact(FairDecideError):
    exit_code = 7
