"""Exception hierarchy shared across the package.

The three concrete classes map one-to-one onto the CLI exit codes, so
library code should raise the most specific class that applies.
"""


class PosidError(Exception):
    """Base class for all package errors."""


class ConfigError(PosidError):
    """Invalid configuration: bad hyperparameters, incompatible options."""

    exit_code = 2


class DataError(PosidError):
    """Invalid data: ingestion failures, domain violations, malformed files."""

    exit_code = 3


class SolverError(PosidError):
    """The numerical solver failed to reach an acceptable solution."""

    exit_code = 4
