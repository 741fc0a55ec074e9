"""Exception hierarchy. Exit codes match the CLI contract."""


class CloudmarkError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(CloudmarkError):
    """Bad argument, config, or input that fails a precondition."""

    exit_code = 2


class DataIOError(CloudmarkError):
    """Missing, malformed, or truncated file."""

    exit_code = 3


class NumericError(CloudmarkError):
    """Non-finite value or numerically impossible request."""

    exit_code = 4


class MetricUndefined(ValidationError):
    """A metric cannot be computed on this input (e.g. single-class labels)."""
