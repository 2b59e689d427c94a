"""Exception types raised by the library."""


class InvalidArgument(ValueError):
    pass


class InvalidData(ValueError):
    """Problem data violates a modelling assumption (e.g. non-positive alphabar)."""


class OutOfDomain(ValueError):
    pass


class UnsupportedOperation(ValueError):
    pass


class NumericalBreakdown(ArithmeticError):
    pass


class SizeError(ValueError):
    """Dense assembly refused because the system is too large."""
