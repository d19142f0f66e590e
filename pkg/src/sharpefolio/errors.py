"""Exception types shared across the package.

The CLI maps these onto exit codes (config 1, data 2, numerical 3), so
library code should raise the most specific type that applies.
"""


class SharpefolioError(Exception):
    """Base class for all package errors."""


class ConfigError(SharpefolioError):
    """Invalid run configuration (bad file, missing key, violated invariant)."""


class DataError(SharpefolioError):
    """Malformed or insufficient input data."""


class NumericalError(SharpefolioError):
    """Non-finite values, degenerate statistics, or solver failure."""
