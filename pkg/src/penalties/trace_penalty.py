"""
Trace-norm penalties: Ψ(B) = Σ|ξ_k(B)|, the convex surrogate for rank
"""
import numpy as np

from models import PenaltyType
from services.spectral_service import SpectralService
from .base_penalty import BasePenalty


class TracePSDPenalty(BasePenalty):
    """Trace norm over the PSD cone (equals the trace there)"""

    penalty_type = PenaltyType.TRACE_PSD

    def value(self, B: np.ndarray) -> float:
        eigvals = self._eigvals(B)
        if not self._in_cone(eigvals):
            return float("inf")
        return float(np.sum(np.abs(eigvals)))

    def prox(self, B: np.ndarray, nu: float) -> np.ndarray:
        return SpectralService.prox_trace_psd(B, nu)


class TraceSymPenalty(BasePenalty):
    """Trace norm without the PSD constraint"""

    penalty_type = PenaltyType.TRACE_SYM

    def value(self, B: np.ndarray) -> float:
        return float(np.sum(np.abs(self._eigvals(B))))

    def prox(self, B: np.ndarray, nu: float) -> np.ndarray:
        return SpectralService.prox_trace_sym(B, nu)
