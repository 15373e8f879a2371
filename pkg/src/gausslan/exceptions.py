"""Exception hierarchy shared by all gausslan modules."""


class GaussLANError(Exception):
    """Base class for all package errors."""


class ParameterError(GaussLANError, ValueError):
    """A parameter vector lies outside the model's open parameter space."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class DomainError(GaussLANError, ValueError):
    """An argument is outside the domain of a numerical routine."""


class SymbolError(GaussLANError, ArithmeticError):
    """A Toeplitz matrix failed to factorize (non-positive symbol or quadrature error)."""

    def __init__(self, message, smallest_pivot=None):
        super().__init__(message)
        self.smallest_pivot = smallest_pivot


class UnsupportedModelError(GaussLANError, KeyError):
    """No envelope table or closed form is known for this model."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unsupported model"


class ContractError(GaussLANError, ValueError):
    """A structural precondition (shape, symmetry, invertibility) is violated."""


class DegenerateDataError(GaussLANError, ValueError):
    """Data carry no information for the requested estimator."""


class InvalidTableError(GaussLANError, ValueError):
    """An envelope table violates the admissibility conditions of the trace bound."""
