"""Exception types shared across the package.

The CLI maps ConfigError (and subclasses) to exit code 1 and NumericError
to exit code 2; everything else is a programming error.
"""


class FewlabelError(Exception):
    """Base class for all package errors."""


class ConfigError(FewlabelError):
    """Invalid configuration, flag, or file."""


class DataError(ConfigError):
    """Dataset cannot satisfy a request (e.g. class smaller than seed count)."""


class BudgetError(ConfigError):
    """Label-budget accounting violation (over-selection, double labeling)."""


class ShapeError(FewlabelError):
    """Tensor dimension mismatch."""


class DomainError(FewlabelError):
    """Operation applied to a degenerate input (zero vector, empty set)."""


class NumericError(FewlabelError):
    """Non-finite value or failed numeric iteration."""
