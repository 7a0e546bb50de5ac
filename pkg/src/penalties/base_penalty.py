"""
Base penalty interface for all spectral penalties
"""
from abc import ABC, abstractmethod

import numpy as np

from models import PenaltyType

# Eigenvalues below -PSD_TOL * max(1, λ_max) count as leaving the PSD cone
PSD_TOL = 1e-8


class BasePenalty(ABC):
    """
    Abstract base class for penalties Ψ(B) on symmetric q x q matrices.
    The fitter only talks to this interface: value for the objective, prox for the gradient step.
    """

    penalty_type: PenaltyType

    @property
    def name(self) -> str:
        return self.penalty_type.value

    @property
    def psd(self) -> bool:
        """Whether the penalty carries the positive-semidefinite constraint"""
        return self.penalty_type.psd

    @abstractmethod
    def value(self, B: np.ndarray) -> float:
        """
        Penalty value Ψ(B); +inf outside the feasible set
        """
        pass

    @abstractmethod
    def prox(self, B: np.ndarray, nu: float) -> np.ndarray:
        """
        argmin_D ½‖D - B‖²_F + ν Ψ(D)
        """
        pass

    def is_feasible(self, B: np.ndarray) -> bool:
        if not self.psd or B.size == 0:
            return True
        return self._in_cone(self._eigvals(B))

    @staticmethod
    def _eigvals(B: np.ndarray) -> np.ndarray:
        """Ascending eigenvalues of the symmetric part"""
        if B.size == 0:
            return np.zeros(0)
        return np.linalg.eigvalsh(0.5 * (B + B.T))

    @staticmethod
    def _in_cone(eigvals: np.ndarray) -> bool:
        if eigvals.size == 0:
            return True
        return bool(eigvals[0] >= -PSD_TOL * max(1.0, float(eigvals[-1])))

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name})"
