"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies.
"""


class WishviError(Exception):
    """Base class for all package errors."""


class ConfigError(WishviError):
    """A run configuration is malformed or violates a cross-field constraint."""


class DataError(WishviError):
    """An input data file cannot be parsed or fails a structural check."""


class InvalidInputError(WishviError):
    """A function received arguments outside its documented domain."""


class NumericalError(WishviError):
    """A numerical operation failed beyond the configured recovery policy."""


class NumericalWarning(UserWarning):
    """A computation produced a degenerate but representable result."""
