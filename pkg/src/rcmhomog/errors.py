"""Exception hierarchy shared by the library and the CLI."""


class RcmError(Exception):
    """Base class for all library errors."""


class ValidationError(RcmError, ValueError):
    """Invalid parameter or mismatched inputs."""


class NumericalError(RcmError, RuntimeError):
    """A numerical computation could not meet its guarantees."""


class BoundaryMassError(NumericalError):
    """Probability mass lost through the truncation boundary exceeds the tolerance."""

    def __init__(self, lost, tol):
        super().__init__(
            f"boundary mass loss {lost:.3e} exceeds tol_boundary={tol:.1e}; enlarge the box"
        )
        self.lost = lost
        self.tol = tol


class BoundaryExitError(NumericalError):
    """A simulated walk reached the outer layer of an absorbing box before its horizon."""


class ConvergenceError(NumericalError):
    """Iterative solver failed to reach the requested residual."""

    def __init__(self, residual, iterations):
        super().__init__(
            f"conjugate gradient did not converge: residual {residual:.3e} after {iterations} iterations"
        )
        self.residual = residual
        self.iterations = iterations
