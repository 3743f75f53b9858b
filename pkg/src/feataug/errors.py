"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.  Library code raises them directly; plain ValueError is
reserved for programmer errors (bad argument types, negative counts).
"""


class FeataugError(Exception):
    """Base class for every error this package raises deliberately."""


class ConfigError(FeataugError):
    """Invalid, missing, or contradictory configuration."""


class DataError(FeataugError):
    """Malformed input data, or a data-dependent precondition violation."""


class NumericError(FeataugError):
    """Numerical failure during training, e.g. a non-finite loss."""
