"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A problem, grid or experiment configuration is inconsistent."""


class DriverEvaluationError(ArithmeticError):
    """The driver returned a non-finite value."""


class ExplosionError(ArithmeticError):
    """A backward sweep produced a non-finite or runaway value.

    Carries the time index ``i``, the node index ``k`` and the offending
    magnitude so the caller can report where the scheme blew up.
    """

    def __init__(self, i, k, magnitude, message=None):
        self.i = i
        self.k = k
        self.magnitude = magnitude
        self.partial = None
        if message is None:
            message = f"explosion at time index {i}, node {k}: |y| = {magnitude:.6g}"
        super().__init__(message)


class ConvergenceError(ArithmeticError):
    """The implicit fixed-point iteration did not converge."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)
