"""Exception types shared across the package."""


class CapacityError(ValueError):
    """Requested system size exceeds what a backend supports."""


class NumericError(ArithmeticError):
    """A numerical routine failed to converge or lost accuracy."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
