"""Exception types raised across the pipeline.

Each class maps onto one failure family so callers (and the CLI exit-code
table) can dispatch on type instead of parsing messages.
"""


class WiGaitError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(WiGaitError, ValueError):
    """Degenerate or colliding scene/walker geometry."""


class LengthError(WiGaitError, ValueError):
    """A signal or sequence is too short for the requested operation."""


class ParameterError(WiGaitError, ValueError):
    pass


class DegenerateInputError(WiGaitError, ValueError):
    """Input has no variance (or rank) where some is required."""


class AlignmentError(WiGaitError, ValueError):
    """Time axes of inputs that must agree do not."""


class LabelError(WiGaitError, ValueError):
    pass


class NumericError(WiGaitError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class DivergenceError(NumericError):
    pass


class StateError(WiGaitError, RuntimeError):
    pass


class ConfigError(WiGaitError, ValueError):
    pass


class DataError(WiGaitError, ValueError):
    """Corrupt, missing or inconsistent data on disk."""


class VersionError(DataError):
    """File version or stored model shape does not match what is expected."""
