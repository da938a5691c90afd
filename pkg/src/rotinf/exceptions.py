"""Exception types shared across the package."""


class DomainError(ValueError):
    """A point lies outside the domain of a regularizer or its conjugate."""


class ReductionRequiredError(ValueError):
    """A marginal has zero entries; solve the support-reduced problem instead."""


class ConvergenceError(RuntimeError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NumericalError(RuntimeError):
    """A computation failed for numerical reasons (singularity, inconsistency)."""
