"""
Hilbert-Schmidt penalties: Ψ(B) = ‖B‖²_F
"""
import numpy as np

from models import PenaltyType
from services.spectral_service import SpectralService
from .base_penalty import BasePenalty


class HSPSDPenalty(BasePenalty):
    """Squared Hilbert-Schmidt norm over the PSD cone"""

    penalty_type = PenaltyType.HS_PSD

    def value(self, B: np.ndarray) -> float:
        if not self.is_feasible(B):
            return float("inf")
        return float(np.sum(B * B))

    def prox(self, B: np.ndarray, nu: float) -> np.ndarray:
        return SpectralService.prox_hs_psd(B, nu)


class HSSymPenalty(BasePenalty):
    """Squared Hilbert-Schmidt norm without constraint"""

    penalty_type = PenaltyType.HS_SYM

    def value(self, B: np.ndarray) -> float:
        return float(np.sum(B * B))

    def prox(self, B: np.ndarray, nu: float) -> np.ndarray:
        return SpectralService.prox_hs_sym(B, nu)
