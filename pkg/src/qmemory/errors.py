"""Exception types shared across the package."""


class PhysicalityError(ValueError):
    """A state, channel or parameter set violates a physical constraint."""


class ConvergenceError(RuntimeError):
    """A numerical procedure failed to converge.

    ``residual`` carries the last convergence measure when one exists.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
