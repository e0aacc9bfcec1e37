"""Exception types shared across the package.

The CLI maps each class onto a distinct exit code, so raise the most
specific one that applies.
"""


class DynlateError(Exception):
    """Base class for package errors."""


class ConfigError(DynlateError, ValueError):
    """Invalid configuration or parameters."""


class DataValidationError(DynlateError, ValueError):
    """Input data violates a shape or domain rule."""


class ParseError(DataValidationError):
    """A panel file could not be parsed."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class OverlapError(DynlateError, ValueError):
    """A conditioning cell or arm subsample is empty."""


class EstimabilityError(DynlateError, ValueError):
    """An estimand cannot be estimated on the given data (e.g. complier mass too small)."""
