"""Exception classes shared across the package.

The CLI maps these onto exit codes: usage errors exit 2, data errors 3,
numeric/training failures 4.
"""


class UsageError(Exception):
    """Caller misused an interface (bad argument, unknown flag or key)."""


class ConfigError(UsageError):
    """A configuration value is invalid or inconsistent."""


class DataError(Exception):
    """Input data is missing, malformed, or outside the supported domain."""


class FormatError(DataError):
    """A binary file failed validation; carries the failing byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class CapacityError(DataError):
    """An input exceeds a configured model limit (e.g. context length)."""


class NumericError(Exception):
    """A computation produced or received non-finite values."""


class TrainingDivergenceError(NumericError):
    """Training failed to reach its target; carries the loss curve."""

    def __init__(self, message: str, loss_curve: list[float] | None = None):
        super().__init__(message)
        self.loss_curve = list(loss_curve or [])


class InvariantViolation(Exception):
    """A hard guarantee was breached (e.g. the frozen LM changed)."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""
