"""Exception hierarchy shared across the toolkit.

The command line maps these onto exit codes: configuration problems exit
with 1, data problems with 2, numerical failures with 3.
"""


class ProbcastError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ProbcastError):
    """Invalid configuration, arguments, or experiment description."""


class DataError(ProbcastError):
    """Missing, malformed, or insufficient input data."""


class NumericalError(ProbcastError):
    """A numerical routine failed to converge or diverged."""
