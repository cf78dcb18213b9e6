class RopeError(Exception):
    """Base class for errors raised by ropeval."""


class DataError(RopeError, ValueError):
    """Non-finite or malformed observations."""


class InsufficientDataError(RopeError, ValueError):
    """Warm-start batch smaller than the parameter dimension."""


class InitializationError(RopeError, ArithmeticError):
    """Warm start or initial information matrix is (numerically) singular."""


class OracleError(RopeError, ArithmeticError):
    """Exact oracle quantities cannot be computed for an environment."""


class ConstructionError(RopeError, RuntimeError):
    """An environment could not be built with the requested properties."""


class ConfigError(RopeError, ValueError):
    """Invalid experiment configuration."""


class IntervalError(RopeError, ArithmeticError):
    """A confidence interval cannot be formed (e.g. diverged replicates)."""


class ParseError(RopeError, ValueError):
    """Malformed input file; the message names the offending line."""
