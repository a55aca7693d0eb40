"""Exception types raised across the package."""


class PerturbedWienerError(Exception):
    """Base class for all package errors."""


class NonConvergence(PerturbedWienerError):
    """Quadrature or an iterative solver did not reach its tolerance."""


class BadBracket(PerturbedWienerError, ValueError):
    """Root bracket endpoints do not straddle a sign change."""


class NonFinite(PerturbedWienerError, ArithmeticError):
    """A function evaluation produced NaN, an infinity or a zero density."""


class NotPositiveDefinite(PerturbedWienerError, ArithmeticError):
    """Cholesky factorization hit a non-positive pivot."""


class DegenerateSample(PerturbedWienerError, ValueError):
    """Sample has zero empirical variance in S or R."""


class OptimFailure(PerturbedWienerError):
    """Likelihood maximization did not stabilise within the restart budget."""


class HorizonTooShort(PerturbedWienerError):
    """Path oracle inspection fell outside the completed renewal cycles."""


class StudyFailure(PerturbedWienerError):
    """Too many Monte Carlo replications failed."""

    def __init__(self, message, failed, reps, summary=None):
        super().__init__(message)
        self.failed = failed
        self.reps = reps
        self.summary = summary


class InfeasibleStart(UserWarning):
    """Estimated intervention position was not below the boundary; B/2 used instead."""
