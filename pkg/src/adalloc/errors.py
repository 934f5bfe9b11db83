"""Exception hierarchy shared by all adalloc modules."""


class AdallocError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(AdallocError, ValueError):
    """Inputs violate a documented contract (domain, shape, or range)."""


class NumericalError(AdallocError, ArithmeticError):
    """A numerical routine could not produce a trustworthy result."""


class NotPositiveDefiniteError(NumericalError):
    """Cholesky factorization hit a non-positive pivot."""


class SingularSystemError(NumericalError):
    """A linear system is singular within the pivot tolerance."""


class ParameterSearchError(AdallocError):
    """No parameter value within the search budget meets the target."""
