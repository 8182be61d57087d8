"""Exception hierarchy shared by every diner module."""


class DinerError(Exception):
    """Base class for all errors raised by diner."""


class ShapeError(DinerError, ValueError):
    """Array extents do not chain or do not match."""


class SizeError(DinerError, ValueError):
    """Grid extent not supported (e.g. not a power of two)."""


class ConfigError(DinerError, ValueError):
    """Invalid configuration value or combination."""


class EmptyInputError(DinerError, ValueError):
    pass


class NumericError(DinerError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class SamplingError(DinerError, ValueError):
    """Propagation distance too large for the grid sampling."""


class DegenerateRangeError(DinerError, ValueError):
    pass


class CheckpointVersionError(DinerError, ValueError):
    pass
