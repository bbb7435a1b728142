"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class SingularKernelError(DomainError):
    """The transition kernel is degenerate (sigma(t) = 0)."""


class ContractError(ValueError):
    """An input violates a documented precondition."""


class NumericalError(FloatingPointError):
    """A computation produced non-finite values.

    ``step`` carries the offending iteration index when one is known.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
