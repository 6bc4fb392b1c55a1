"""Exception types shared across the toolkit.

Each failure category gets its own class so the CLI can map them to
stable exit codes (config errors -> 2, runtime failures -> 3).
"""


class PtlkitError(Exception):
    """Base class for all toolkit errors."""


class RejectedInputError(PtlkitError, ValueError):
    """An argument violates a documented precondition (shape, range, emptiness)."""


class TrainingDivergedError(PtlkitError, RuntimeError):
    """A gradient or loss became non-finite during training."""


class ModelDivergedError(PtlkitError, RuntimeError):
    """A dynamics model produced a non-finite prediction."""


class SimulationDivergedError(PtlkitError, RuntimeError):
    """An environment state became non-finite."""


class PlanningFailedError(PtlkitError, RuntimeError):
    """Every candidate action sequence evaluated to a non-finite reward."""


class ConfigError(PtlkitError, ValueError):
    """A configuration file failed to parse or validate."""


class ReportError(PtlkitError, RuntimeError):
    """Report generation could not read the requested run artifacts."""
