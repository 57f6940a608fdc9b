"""Exception types shared across the package."""


class DcptError(Exception):
    """Base class for all package errors."""


class ParameterError(DcptError, ValueError):
    """An argument is outside its legal range."""


class ContractError(DcptError, ValueError):
    """Shapes or structures passed between components do not agree."""


class NumericError(DcptError, ArithmeticError):
    """A computation hit non-finite values or a degenerate configuration."""


class ConfigError(DcptError, ValueError):
    """A run configuration or dataset failed validation.

    ``problems`` lists every offending field so callers can report them all
    at once instead of one per run.
    """

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])


class FormatError(DcptError, ValueError):
    """A binary or text file does not match its expected layout."""
