"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, NumericalError -> 3.
"""


class FairclfError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(FairclfError):
    """Invalid run configuration or CLI usage."""


class DataError(FairclfError):
    """Malformed dataset file or infeasible generation parameters."""


class NumericalError(FairclfError):
    """Non-finite values encountered during training or optimization."""
