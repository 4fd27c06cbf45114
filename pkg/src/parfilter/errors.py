"""Exception hierarchy shared by every module."""


class ParFilterError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ParFilterError, ValueError):
    """Input data or arguments violate a documented precondition."""


class ConfigError(InvalidInputError):
    """A testing configuration is malformed."""


class EnumerationLimitError(InvalidInputError):
    """A subset enumeration would exceed the supported group size."""


class ModeMismatchError(ParFilterError, ValueError):
    """Requested estimator/weight/selection combination lacks an FDR guarantee."""


class UnsupportedModeError(ParFilterError, ValueError):
    """Operation is not available for the requested data-generating mode."""


class NumericalError(ParFilterError, ArithmeticError):
    """A numerical routine failed or an internal invariant was violated."""
