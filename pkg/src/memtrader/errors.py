"""Exception hierarchy shared by every memtrader module."""


class MemTraderError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(MemTraderError, ValueError):
    """Input file could not be parsed (bad syntax, missing field)."""


class ValidationError(MemTraderError, ValueError):
    """Input parsed but violates a domain invariant."""


class ConfigurationError(MemTraderError, ValueError):
    """Inconsistent experiment or environment configuration."""


class DateLookupError(MemTraderError, KeyError):
    """Requested date is not a trading day of the environment or phase."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class WindowError(MemTraderError, ValueError):
    """Not enough price history (or future) around a date."""


class TemporalError(MemTraderError, ValueError):
    """A score was requested for a time before the event happened."""


class MemoryLookupError(MemTraderError, KeyError):
    """Unknown memory event id."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ProviderError(MemTraderError):
    """Remote model/embedding provider failed after retries."""

    def __init__(self, message: str, status: int | None = None, body: str | None = None):
        super().__init__(message)
        self.status = status
        self.body = body


class FormatError(MemTraderError, ValueError):
    """Model output did not contain a valid decision object."""


class UndefinedMetricError(MemTraderError, ArithmeticError):
    """Metric is mathematically undefined for the given series."""


class LeakageError(MemTraderError, RuntimeError):
    """An observation referenced data dated after the decision day."""


class ExperimentError(MemTraderError, RuntimeError):
    """An epoch of a multi-epoch experiment aborted."""

    def __init__(self, epoch: int, cause: BaseException):
        super().__init__(f"epoch {epoch} failed: {cause}")
        self.epoch = epoch
        self.cause = cause


class ComparisonError(MemTraderError, ValueError):
    """Report and environment cannot be compared."""
