"""Error types shared across the package.

Every error carries a machine-parseable ``code`` so the CLI can emit
``error_code=<code>`` lines on the diagnostic stream.
"""


class MemstageError(Exception):
    code = "error"


class DimensionError(MemstageError):
    """Shapes of two operands do not line up."""

    code = "dimension_error"


class ArgumentError(MemstageError):
    """An argument violates a precondition (empty input, bad range, ...)."""

    code = "argument_error"


class DataError(MemstageError):
    """Input data violates a contract (missing label, bad row, ...)."""

    code = "data_error"


class ConfigError(MemstageError):
    """A configuration file or value is invalid."""

    code = "config_error"


class StateError(MemstageError):
    """An operation was called in an invalid order (e.g. backward twice)."""

    code = "state_error"


class DeterminismError(MemstageError):
    """A function that must be deterministic returned differing values."""

    code = "determinism_error"


class TrainingError(MemstageError):
    """Training aborted (non-finite loss)."""

    code = "training_error"


class CompatibilityError(MemstageError):
    """Checkpoint and data disagree on widths or vocabulary."""

    code = "compatibility_error"
