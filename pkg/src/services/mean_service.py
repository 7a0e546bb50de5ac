"""
Mean Service - Single Responsibility: smoothing-spline mean estimation with GCV
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from models import KernelSpec, MeanBlock
from models.dataset import FunctionalDataset
from services.kernel_service import KernelService
from utils.exceptions import CovarianceInputError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_MEAN_GRID = np.logspace(-10, 0, 40)


@dataclass(frozen=True)
class MeanEstimate:
    """μ̂(t) = Σ_i c_i K(t, anchor_i)"""
    anchor_points: np.ndarray
    coefficients: np.ndarray
    gcv_lambda: Optional[float] = None
    spec: KernelSpec = field(default_factory=KernelSpec)

    @property
    def is_zero(self) -> bool:
        return self.coefficients.size == 0 or not np.any(self.coefficients)

    def to_block(self) -> MeanBlock:
        return MeanBlock(
            anchor_points=self.anchor_points.tolist(),
            coefficients=self.coefficients.tolist(),
            gcv_lambda=self.gcv_lambda,
        )

    @classmethod
    def from_block(cls, block: MeanBlock, spec: KernelSpec) -> "MeanEstimate":
        return cls(
            anchor_points=np.asarray(block.anchor_points, dtype=float),
            coefficients=np.asarray(block.coefficients, dtype=float),
            gcv_lambda=block.gcv_lambda,
            spec=spec,
        )


class MeanService:
    """Kernel ridge (smoothing spline) fit of pooled observations in H(K)"""

    @staticmethod
    def zero_mean(spec: Optional[KernelSpec] = None) -> MeanEstimate:
        """μ̂ ≡ 0, for data that is already centered"""
        return MeanEstimate(anchor_points=np.zeros(0), coefficients=np.zeros(0), gcv_lambda=None,
                            spec=spec or KernelSpec())

    @staticmethod
    def gcv_path(Ktilde: np.ndarray, y: np.ndarray, lambda_grid: Sequence[float]) -> Dict[str, np.ndarray]:
        """
        GCV(λ) = N‖(I - A)y‖² / tr(I - A)² with A = K̃(K̃ + NλI)⁻¹, for every λ of the grid,
        computed from one eigen-decomposition of K̃.

        Returns:
            Dict with 'lambdas', 'gcv', and the eigen pieces 'd', 'U', 'Uty'
        """
        y = np.asarray(y, dtype=float)
        N = y.size
        d, U = linalg.eigh(Ktilde)
        d = np.clip(d, 0.0, None)
        Uty = U.T @ y
        lambdas = np.asarray(lambda_grid, dtype=float)
        scores = np.empty(lambdas.size)
        for idx, lam in enumerate(lambdas):
            damp = N * lam / (d + N * lam)  # eigenvalues of I - A
            resid_sq = float(np.sum((damp * Uty) ** 2))
            scores[idx] = N * resid_sq / float(np.sum(damp)) ** 2
        return {"lambdas": lambdas, "gcv": scores, "d": d, "U": U, "Uty": Uty}

    @staticmethod
    def gcv_score_direct(Ktilde: np.ndarray, y: np.ndarray, lam: float) -> float:
        """GCV(λ) by linear solves instead of the eigen-decomposition"""
        y = np.asarray(y, dtype=float)
        N = y.size
        system = Ktilde + N * lam * np.eye(N)
        c = linalg.solve(system, y, assume_a='sym')
        resid = y - Ktilde @ c
        hat_trace = float(np.trace(linalg.solve(system, Ktilde, assume_a='sym')))
        return float(N * resid @ resid / (N - hat_trace) ** 2)

    @staticmethod
    def fit_mean(data: FunctionalDataset, spec: KernelSpec,
                 lambda_grid: Optional[Sequence[float]] = None) -> MeanEstimate:
        """
        Fit μ̂ to the pooled observations, smoothing parameter chosen by GCV.

        Args:
            data: Functional dataset (all curves pooled, no per-curve weighting)
            spec: Kernel specification
            lambda_grid: Candidate λ values (default: 40 log-spaced in [1e-10, 1])

        Returns:
            MeanEstimate anchored at the pooled observation times

        Raises:
            CovarianceInputError: Fewer than 2 observations or empty grid
        """
        grid = DEFAULT_MEAN_GRID if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
        if grid.size == 0 or np.any(grid <= 0):
            raise CovarianceInputError("lambda_grid must be non-empty and positive")
        t = data.pooled_times()
        y = data.pooled_values()
        if t.size < 2:
            raise CovarianceInputError(f"Mean smoothing needs at least 2 observations (got {t.size})")

        K = KernelService.gram(spec, t)
        try:
            path = MeanService.gcv_path(K, y, grid)
        except linalg.LinAlgError as e:
            logger.error(f"Error computing GCV path for {t.size} observations: {e}")
            raise
        best = int(np.argmin(path["gcv"]))
        lam = float(grid[best])

        N = y.size
        denom = path["d"] + N * lam
        if not np.all(denom > 0):
            raise NumericalError(f"Singular smoothing system at lambda={lam:g}")
        coefficients = path["U"] @ (path["Uty"] / denom)
        if not np.all(np.isfinite(coefficients)):
            raise NumericalError(f"Non-finite smoothing coefficients at lambda={lam:g}")

        logger.debug(f"Mean fit: N={N}, GCV lambda={lam:.3e}, GCV={path['gcv'][best]:.4g}")
        return MeanEstimate(anchor_points=t, coefficients=coefficients, gcv_lambda=lam, spec=spec)

    @staticmethod
    def eval_mean(est: MeanEstimate, t: float) -> float:
        """μ̂(t)"""
        return float(MeanService.eval_mean_many(est, np.atleast_1d(t))[0])

    @staticmethod
    def eval_mean_many(est: MeanEstimate, t: Union[Sequence[float], np.ndarray]) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if est.coefficients.size == 0:
            return np.zeros(t.size)
        return KernelService.kernel_matrix(est.spec, t, est.anchor_points) @ est.coefficients
