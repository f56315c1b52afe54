"""Exception hierarchy shared by every subsystem.

The CLI maps these onto process exit codes, so library code raises the
most specific class that applies.
"""


class YNetError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(YNetError, ValueError):
    """Invalid configuration, usage, or incompatible checkpoint."""

    exit_code = 2


class ShapeError(YNetError, ValueError):
    """Tensor or grid extents do not agree."""

    exit_code = 2


class DataError(YNetError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class NumericalError(YNetError, ArithmeticError):
    """A computation produced non-finite values or a degenerate result."""

    exit_code = 4
