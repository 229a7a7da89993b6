"""Exception and warning types shared across the package."""


class GWLabError(Exception):
    """Base class for all errors raised by gwlab."""


class ParameterOutOfRange(GWLabError, ValueError):
    pass


class NotCritical(GWLabError, ValueError):
    pass


class DomainError(GWLabError, ValueError):
    pass


class TruncationOverflow(GWLabError, MemoryError):
    pass


class StirlingRangeError(GWLabError, ValueError):
    pass


class InversionUnstable(GWLabError, ArithmeticError):
    pass


class QuadratureNonConverged(GWLabError, ArithmeticError):
    pass


class ConfigInvalid(GWLabError, ValueError):
    pass


class RegimeWarning(UserWarning):
    """phi(n)/n is too large for the small-deviation asymptotics to be meaningful."""
