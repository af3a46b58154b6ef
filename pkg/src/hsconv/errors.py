"""Exception types shared across the package."""


class HsconvError(Exception):
    """Base class for all package errors."""


class DomainError(HsconvError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class DivergentAtOne(HsconvError, ArithmeticError):
    """A hypergeometric-type quantity is infinite at the unit argument."""


class QuadratureFailed(HsconvError, ArithmeticError):
    """Adaptive quadrature did not reach its tolerance.

    The last two estimates are kept so callers can judge how close it came.
    """

    def __init__(self, message, estimates=()):
        super().__init__(message)
        self.estimates = tuple(estimates)
