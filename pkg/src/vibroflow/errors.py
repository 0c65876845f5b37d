"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class VibroflowError(Exception):
    """Base class for all package errors."""


class ConfigError(VibroflowError):
    """Invalid configuration value or inconsistent option combination."""


class DataError(VibroflowError):
    """Malformed, truncated, or inconsistent data (files or in-memory)."""


class NumericalError(VibroflowError):
    """Non-finite values or diverging computations."""
