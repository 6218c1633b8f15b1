"""Error taxonomy shared across the package.

Each class maps to a process exit code in the command-line layer:
bad configuration -> 2, bad or insufficient data -> 3, numerical
failure (divergence, non-finite values) -> 4.
"""


class PQLabError(Exception):
    """Base class for all package errors."""


class ConfigError(PQLabError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class DataError(PQLabError):
    """Malformed, insufficient, or out-of-domain input data."""

    exit_code = 3


class NumericError(PQLabError):
    """Numerical failure: non-finite values, divergence, degenerate state."""

    exit_code = 4
