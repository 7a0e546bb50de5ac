"""
Spectral Service - Single Responsibility: symmetric-matrix utilities, proximal operators, Gram factorization
"""
import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy import linalg

from utils.exceptions import CovarianceInputError, NumericalError

logger = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class SymEig:
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending"""
    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


@dataclass(frozen=True)
class GramFactor:
    """
    Rank-revealing factor of a Gram matrix: M M^T ≈ K̃ with M of full column rank q.
    """
    M: np.ndarray
    M_pinv: np.ndarray
    rank_q: int
    curve_blocks: List[np.ndarray] = field(default_factory=list)


def _check_square(B: np.ndarray, name: str = "B") -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise CovarianceInputError(f"{name} must be a square matrix (got shape {B.shape})")
    return B


def _check_nu(nu: float) -> float:
    if not np.isfinite(nu) or nu < 0:
        raise CovarianceInputError(f"nu must be a non-negative finite number (got {nu})")
    return float(nu)


class SpectralService:
    """Operations on symmetric matrices"""

    @staticmethod
    def svec(B: np.ndarray) -> np.ndarray:
        """
        Stack the lower triangle column by column, off-diagonals scaled by √2.

        ‖svec(B)‖₂ = ‖B‖_F for symmetric B.
        """
        B = _check_square(B)
        q = B.shape[0]
        rows, cols = np.triu_indices(q)
        scale = np.where(rows == cols, 1.0, SQRT2)
        # B symmetric: B[j, i] for i >= j walks the lower triangle column-major
        return B[rows, cols] * scale

    @staticmethod
    def svec_inv(b: np.ndarray) -> np.ndarray:
        """
        Inverse of svec.

        Raises:
            CovarianceInputError: If len(b) is not a triangular number
        """
        b = np.asarray(b, dtype=float).ravel()
        q = int(round((np.sqrt(8 * b.size + 1) - 1) / 2))
        if q * (q + 1) // 2 != b.size:
            raise CovarianceInputError(f"Length {b.size} is not a triangular number q(q+1)/2")
        rows, cols = np.triu_indices(q)
        vals = np.where(rows == cols, b, b / SQRT2)
        B = np.zeros((q, q))
        B[rows, cols] = vals
        B[cols, rows] = vals
        return B

    @staticmethod
    def sym_eig(B: np.ndarray) -> SymEig:
        """
        Symmetric eigen-decomposition, values descending, each eigenvector
        signed so that its largest-magnitude entry is positive.
        """
        B = _check_square(B)
        values, vectors = linalg.eigh(0.5 * (B + B.T))
        order = np.argsort(values)[::-1]
        values = values[order]
        vectors = vectors[:, order]
        if vectors.size:
            pivot = np.argmax(np.abs(vectors), axis=0)
            signs = np.sign(vectors[pivot, np.arange(vectors.shape[1])])
            signs[signs == 0] = 1.0
            vectors = vectors * signs
        return SymEig(values=values, vectors=vectors)

    @staticmethod
    def spectral_radius(B: np.ndarray) -> float:
        B = _check_square(B)
        if B.size == 0:
            return 0.0
        return float(np.max(np.abs(linalg.eigvalsh(0.5 * (B + B.T)))))

    @staticmethod
    def _spectral_map(B: np.ndarray, fn) -> np.ndarray:
        eig = SpectralService.sym_eig(B)
        D = (eig.vectors * fn(eig.values)) @ eig.vectors.T
        return 0.5 * (D + D.T)

    @staticmethod
    def prox_trace_psd(B: np.ndarray, nu: float) -> np.ndarray:
        """argmin over PSD D of ½‖D - B‖²_F + ν‖D‖_*: eigenvalues (λ - ν)₊"""
        nu = _check_nu(nu)
        return SpectralService._spectral_map(B, lambda lam: np.maximum(lam - nu, 0.0))

    @staticmethod
    def prox_trace_sym(B: np.ndarray, nu: float) -> np.ndarray:
        """argmin over symmetric D of ½‖D - B‖²_F + ν‖D‖_*: eigenvalues sign(λ)(|λ| - ν)₊"""
        nu = _check_nu(nu)
        return SpectralService._spectral_map(B, lambda lam: np.sign(lam) * np.maximum(np.abs(lam) - nu, 0.0))

    @staticmethod
    def prox_hs_psd(B: np.ndarray, nu: float) -> np.ndarray:
        """argmin over PSD D of ½‖D - B‖²_F + ν‖D‖²_F: eigenvalues max(λ, 0)/(1 + 2ν)"""
        nu = _check_nu(nu)
        return SpectralService._spectral_map(B, lambda lam: np.maximum(lam, 0.0) / (1.0 + 2.0 * nu))

    @staticmethod
    def prox_hs_sym(B: np.ndarray, nu: float) -> np.ndarray:
        """argmin over symmetric D of ½‖D - B‖²_F + ν‖D‖²_F = B/(1 + 2ν)"""
        nu = _check_nu(nu)
        B = _check_square(B)
        return B / (1.0 + 2.0 * nu)

    @staticmethod
    def factor_gram(Ktilde: np.ndarray, curve_sizes: Sequence[int], rel_tol: float = 1e-10) -> GramFactor:
        """
        Factor K̃ = M Mᵀ keeping eigenpairs above rel_tol·λ_max.

        Args:
            Ktilde: N x N Gram matrix of the pooled time points
            curve_sizes: Observations per curve (sums to N); M is sliced into per-curve blocks
            rel_tol: Relative eigenvalue cutoff in (0, 1)

        Returns:
            GramFactor with M = P diag(√λ), M⁺ = diag(λ^-½) Pᵀ and curve blocks

        Raises:
            CovarianceInputError: Shape or size mismatch, rel_tol outside (0, 1)
            NumericalError: K̃ is not positive semi-definite (not a Gram matrix)
        """
        K = _check_square(Ktilde, "Ktilde")
        sizes = [int(s) for s in curve_sizes]
        if sum(sizes) != K.shape[0] or any(s < 0 for s in sizes):
            raise CovarianceInputError(f"curve_sizes sum to {sum(sizes)} but K̃ is {K.shape[0]} x {K.shape[0]}")
        if not 0 < rel_tol < 1:
            raise CovarianceInputError(f"rel_tol must lie in (0, 1) (got {rel_tol})")
        if K.shape[0] == 0:
            raise CovarianceInputError("Cannot factor an empty Gram matrix")

        eig = SpectralService.sym_eig(K)
        lam_max = float(eig.values[0])
        if lam_max <= 0:
            raise NumericalError("Gram matrix has no positive eigenvalue")
        if eig.values[-1] < -1e-6 * lam_max:
            raise NumericalError(
                f"Matrix is not a Gram matrix: min eigenvalue {eig.values[-1]:.3e} vs max {lam_max:.3e}"
            )

        keep = eig.values > rel_tol * lam_max
        lam = eig.values[keep]
        P = eig.vectors[:, keep]
        root = np.sqrt(lam)
        M = P * root
        M_pinv = (P / root).T

        bounds = np.cumsum([0] + sizes)
        blocks = [M[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]
        logger.debug(f"Gram factor: N={K.shape[0]}, q={int(keep.sum())}, rel_tol={rel_tol:g}")
        return GramFactor(M=M, M_pinv=M_pinv, rank_q=int(keep.sum()), curve_blocks=blocks)
