"""
Penalties package: spectral penalties used as the non-smooth part of the fit
"""
from .base_penalty import BasePenalty
from .penalty_registry import PenaltyRegistry, get_penalty, get_penalty_registry

__all__ = ['BasePenalty', 'PenaltyRegistry', 'get_penalty', 'get_penalty_registry']
