"""
Exception hierarchy shared by the services and the CLI
"""
from typing import Optional


class CovarianceError(RuntimeError):
    """Base class for all estimation errors"""


class CovarianceInputError(CovarianceError, ValueError):
    """Invalid input: out-of-domain times, bad shapes, empty or degenerate data"""


class NumericalError(CovarianceError):
    """Non-finite values or matrices that violate a numerical precondition"""

    def __init__(self, message: str, iteration: Optional[int] = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class DegenerateVarianceError(CovarianceError, ValueError):
    """Correlation requested where the estimated variance is below the floor"""

    def __init__(self, t: float, variance: float, floor: float):
        super().__init__(f"Estimated variance {variance:.3e} at t={t:.6g} is below floor {floor:.0e}")
        self.t = t
        self.variance = variance


class DegenerateEstimateError(CovarianceError):
    """The fitted estimate carries no L2 mass (R is numerically zero)"""
