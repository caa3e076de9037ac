"""Exception types raised across the package."""

from __future__ import annotations


class BpfdError(Exception):
    """Base class for all package errors."""


class GridError(BpfdError, ValueError):
    """Invalid grid construction or out-of-range index."""


class DimensionMismatch(BpfdError, ValueError):
    pass


class SignConditionViolated(BpfdError):
    """The cell Peclet number h*|u|/(2*mu) exceeds 1, so stencil signs are not fixed."""

    def __init__(self, a_value: float):
        self.a_value = float(a_value)
        super().__init__(f"sign condition violated: h*|u|/(2*mu) = {self.a_value:.6g} > 1")


class SignPatternViolated(BpfdError):
    """A matrix handed to the M-matrix test has the wrong sign pattern."""


class SingularMatrix(BpfdError):
    pass


class Breakdown(BpfdError):
    """BiCGSTAB recurrence broke down (rho or omega numerically zero)."""


class MaxIterExceeded(BpfdError):
    """Iteration cap reached. ``best`` holds the iterate with smallest residual."""

    def __init__(self, best, iterations: int, residual: float):
        self.best = best
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"no convergence after {iterations} iterations (relative residual {residual:.3e})"
        )


class IncompatibleRHS(BpfdError, ValueError):
    """Periodic Poisson right-hand side has nonzero weighted mean."""


class DomainError(BpfdError, ValueError):
    """Energy derivative evaluated outside its domain (|x| >= 1 for log energies)."""


class NoDoubleWell(BpfdError, ValueError):
    """Logarithmic energy parameters admit no interior well location."""


class InsufficientHistory(BpfdError, ValueError):
    pass
