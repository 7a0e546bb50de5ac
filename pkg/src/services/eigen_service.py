"""
Eigen Service - Single Responsibility: L2 eigen-decomposition of a fitted covariance and FPC scores
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

import config
from models import KernelSpec
from models.dataset import FunctionalDataset
from services.covariance_service import CovarianceEstimate
from services.kernel_service import KernelService, QuadratureRule
from services.mean_service import MeanEstimate, MeanService
from services.spectral_service import SpectralService
from utils.exceptions import CovarianceError, CovarianceInputError, DegenerateEstimateError

logger = logging.getLogger(__name__)

# Eigenvalues below this fraction of the largest magnitude count as zero
ZERO_TOL = 1e-10
SIGN_TOL = 1e-10


@dataclass(frozen=True)
class EigenSystem:
    """
    L2 eigenvalues ζ_k (descending) and coefficient vectors: φ̂_k(t) = coeffs[:, k]ᵀ z(t).
    """
    values: np.ndarray
    coeffs: np.ndarray
    fve: np.ndarray

    @property
    def n_components(self) -> int:
        return int(self.values.size)


class EigenService:
    """Closed-form L2 spectral analysis of Ĉ = Σ B_kl v_k ⊗ v_l"""

    @staticmethod
    def l2_eigen(est: CovarianceEstimate, rule: QuadratureRule, rel_tol: float = config.RANK_TOL) -> EigenSystem:
        """
        L2 eigenpairs through the congruence R^½ B R^½ with R = M⁺ Q (M⁺)ᵀ.

        R^-½ is a pseudo-inverse square root (eigenvalues of R at or below
        rel_tol·max are dropped). Eigenfunctions are signed so that ∫φ̂_k ≥ 0,
        or, when that integral vanishes, so that the largest coefficient is positive.

        Raises:
            DegenerateEstimateError: R is numerically zero
        """
        Mp = est.factor.M_pinv
        Q = KernelService.l2_cross_gram(est.spec, est.anchor_points, rule)
        R = Mp @ Q @ Mp.T
        R = 0.5 * (R + R.T)

        eig_R = SpectralService.sym_eig(R)
        r_max = float(eig_R.values[0]) if eig_R.values.size else 0.0
        if not r_max > 0:
            raise DegenerateEstimateError("L2 Gram matrix R of the basis is numerically zero")
        keep = eig_R.values > rel_tol * r_max
        W = eig_R.vectors[:, keep]
        r = eig_R.values[keep]
        if not np.all(keep):
            logger.info(f"R pseudo-inverse square root drops {int((~keep).sum())} direction(s)")
        R_half = (W * np.sqrt(r)) @ W.T
        R_mhalf = (W / np.sqrt(r)) @ W.T

        S = R_half @ est.B @ R_half
        eig_S = SpectralService.sym_eig(0.5 * (S + S.T))
        magnitude = np.max(np.abs(eig_S.values)) if eig_S.values.size else 0.0
        nonzero = np.abs(eig_S.values) > ZERO_TOL * magnitude if magnitude > 0 else np.zeros(eig_S.values.size, bool)

        values = eig_S.values[nonzero]
        V = eig_S.vectors[:, nonzero]
        U = Mp.T @ (R_mhalf @ V)

        # Sign convention: ∫φ̂_k ≥ 0
        z_integral = rule.integrate(KernelService.kernel_matrix(est.spec, rule.nodes, est.anchor_points))
        integrals = np.atleast_1d(z_integral @ U) if U.size else np.zeros(0)
        for k in range(values.size):
            if abs(integrals[k]) >= SIGN_TOL:
                flip = integrals[k] < 0
            else:
                flip = U[np.argmax(np.abs(U[:, k])), k] < 0
            if flip:
                U[:, k] = -U[:, k]

        positive = np.clip(values, 0.0, None)
        total = positive.sum()
        fve = np.cumsum(positive) / total if total > 0 else np.zeros(values.size)

        logger.info(f"L2 eigen-decomposition: {values.size} nonzero eigenvalue(s)")
        return EigenSystem(values=values, coeffs=U, fve=fve)

    @staticmethod
    def numerical_rank(est: CovarianceEstimate, rel_tol: float = 1e-6) -> int:
        """Eigenvalues of B̂ with magnitude above rel_tol·max(|ξ|max, 1e-300)"""
        if est.B.size == 0:
            return 0
        magnitudes = np.abs(linalg.eigvalsh(0.5 * (est.B + est.B.T)))
        threshold = rel_tol * max(float(magnitudes.max()), 1e-300)
        return int(np.sum(magnitudes > threshold))

    @staticmethod
    def truncate_by_fve(sys: EigenSystem, threshold: float) -> int:
        """Smallest number of components whose cumulative FVE reaches `threshold`"""
        if not 0 < threshold <= 1:
            raise CovarianceInputError(f"FVE threshold must lie in (0, 1] (got {threshold})")
        if sys.n_components == 0:
            return 0
        reached = np.nonzero(sys.fve >= threshold - 1e-12)[0]
        return int(reached[0] + 1) if reached.size else sys.n_components

    @staticmethod
    def eval_eigenfunctions(est: CovarianceEstimate, sys: EigenSystem, t: Sequence[float]) -> np.ndarray:
        """Matrix [φ̂_k(t_i)] of shape (len(t), K)"""
        return KernelService.kernel_matrix(est.spec, np.atleast_1d(t), est.anchor_points) @ sys.coeffs

    @staticmethod
    def reconstruct(est: CovarianceEstimate, sys: EigenSystem, s: Sequence[float],
                    t: Optional[Sequence[float]] = None) -> np.ndarray:
        """Σ_k ζ_k φ̂_k(s) φ̂_k(t) on a grid"""
        Phi_s = EigenService.eval_eigenfunctions(est, sys, s)
        Phi_t = Phi_s if t is None else EigenService.eval_eigenfunctions(est, sys, t)
        return (Phi_s * sys.values) @ Phi_t.T

    @staticmethod
    def fpc_scores(data: FunctionalDataset, mean: MeanEstimate, sys: EigenSystem, est: CovarianceEstimate,
                   k: int, rule: QuadratureRule, presmooth_grid: Optional[Sequence[float]] = None) -> np.ndarray:
        """
        Projection scores ∫(X̂_i - μ̂) φ̂_j for j = 1..k, X̂_i a GCV smoothing spline of curve i alone.

        Args:
            data: Curves to score
            mean: μ̂ used for centering
            sys: L2 eigen system of est
            est: Fitted covariance
            k: Number of leading components
            rule: Quadrature rule; the smoothed curves are evaluated on its nodes
            presmooth_grid: λ grid of the per-curve smoother (default as fit_mean)

        Returns:
            Array (n_curves, k); rows of curves that cannot be smoothed are NaN

        Raises:
            CovarianceInputError: k outside 1..number of eigenfunctions
        """
        if k < 1 or k > sys.n_components:
            raise CovarianceInputError(f"k must lie in 1..{sys.n_components} (got {k})")

        phi = EigenService.eval_eigenfunctions(est, sys, rule.nodes)[:, :k]
        mu = MeanService.eval_mean_many(mean, rule.nodes)
        weighted_phi = phi * rule.weights[:, None]
        spec: KernelSpec = est.spec

        scores = np.full((data.n_curves, k), np.nan)
        missing = 0
        for i in range(data.n_curves):
            if data.times[i].size < 2:
                missing += 1
                continue
            single = data.subset([i])
            try:
                smooth = MeanService.fit_mean(single, spec, presmooth_grid)
            except (CovarianceError, linalg.LinAlgError) as e:
                logger.warning(f"Curve {data.curve_ids[i]} could not be smoothed: {e}")
                missing += 1
                continue
            centered = MeanService.eval_mean_many(smooth, rule.nodes) - mu
            scores[i] = centered @ weighted_phi

        if missing:
            logger.warning(f"{missing} curve(s) without FPC scores")
        return scores
