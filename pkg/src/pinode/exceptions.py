"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Raised for malformed inputs, shapes or configuration values."""


class NumericFailure(ArithmeticError):
    """Raised when a computation produces a non-finite value.

    ``where`` names the operation, stage or step that failed.
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class DatasetError(ValueError):
    """Raised when a dataset file cannot be parsed or violates its invariants."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
