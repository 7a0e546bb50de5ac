"""
Penalty registry mapping PenaltyType to a shared penalty instance
"""
import logging
import threading
from typing import Dict, List, Optional, Union

from models import PenaltyType
from .base_penalty import BasePenalty
from .hs_penalty import HSPSDPenalty, HSSymPenalty
from .trace_penalty import TracePSDPenalty, TraceSymPenalty

logger = logging.getLogger(__name__)


class PenaltyRegistry:
    """
    Holds one stateless instance per penalty type.
    Thread-safe so concurrent fits can look penalties up.
    """

    def __init__(self):
        self.penalties: Dict[PenaltyType, BasePenalty] = {}
        self.lock = threading.Lock()
        for penalty in (TracePSDPenalty(), TraceSymPenalty(), HSPSDPenalty(), HSSymPenalty()):
            self.penalties[penalty.penalty_type] = penalty
        logger.debug("PenaltyRegistry initialized")

    def get(self, penalty_type: Union[PenaltyType, str]) -> BasePenalty:
        """
        Look up a penalty by type or its string value

        Raises:
            ValueError: Unknown penalty type
        """
        try:
            key = PenaltyType(penalty_type)
        except ValueError:
            raise ValueError(f"Unknown penalty type: {penalty_type}")
        with self.lock:
            return self.penalties[key]

    def available(self) -> List[PenaltyType]:
        with self.lock:
            return list(self.penalties)


# Global registry instance
_penalty_registry: Optional[PenaltyRegistry] = None
_registry_lock = threading.Lock()


def get_penalty_registry() -> PenaltyRegistry:
    """Get or create the global penalty registry instance"""
    global _penalty_registry
    with _registry_lock:
        if _penalty_registry is None:
            _penalty_registry = PenaltyRegistry()
        return _penalty_registry


def get_penalty(penalty_type: Union[PenaltyType, str]) -> BasePenalty:
    return get_penalty_registry().get(penalty_type)
