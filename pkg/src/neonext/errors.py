"""Exception taxonomy shared across the package."""


class ShapeError(ValueError):
    """Dimension mismatch or divisibility violation."""


class ParameterError(ValueError):
    """Invalid parameter value or parameter/spec mismatch."""


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class DataError(ValueError):
    """Dataset file missing, truncated, or containing invalid records."""


class NumericError(RuntimeError):
    """Non-finite value encountered where finiteness is required."""


class UsageError(RuntimeError):
    """API misuse, e.g. replaying a consumed tape."""
