"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: config/usage problems exit 2, data
problems exit 3, numeric failures (NaN/Inf) exit 4.
"""


class XmodalError(Exception):
    """Base class for all package errors."""


class ConfigError(XmodalError):
    """Invalid configuration value or unknown config key."""


class UsageError(XmodalError):
    """An operation was called in a way its contract forbids."""


class DimensionError(UsageError):
    """Shape or dimension mismatch between operands."""


class DataError(XmodalError):
    """Malformed or out-of-contract dataset content."""


class NumericError(XmodalError):
    """A computation produced NaN or Inf, or hit a degenerate input."""
