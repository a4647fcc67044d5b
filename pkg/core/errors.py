"""
Exception Hierarchy
Errors raised by the numerical kernels, the sampler and data ingestion.
"""

from typing import Optional


class BlockGError(Exception):
    """Base class for all package errors."""


class NumericalError(BlockGError, ArithmeticError):
    """Non-finite input or a quantity that must be positive was not."""


class NotPositiveDefiniteError(NumericalError):
    """Cholesky factorization failed."""

    def __init__(self, dim: int, message: Optional[str] = None):
        self.dim = dim
        super().__init__(message or f"matrix of dimension {dim} is not positive definite")


class QuadratureError(NumericalError):
    """Adaptive quadrature did not converge."""

    def __init__(self, partial_estimate: float, depth: int, message: Optional[str] = None):
        self.partial_estimate = partial_estimate
        self.depth = depth
        super().__init__(
            message or f"quadrature did not converge after {depth} refinements "
                       f"(partial estimate {partial_estimate!r})"
        )


class SamplerAbort(BlockGError, RuntimeError):
    """An MCMC step failed; carries the iteration at which it happened."""

    def __init__(self, iteration: int, cause: BaseException):
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"sampler aborted at iteration {iteration}: {cause}")


class SchemaError(BlockGError, ValueError):
    """Input table does not have the expected shape or content."""
