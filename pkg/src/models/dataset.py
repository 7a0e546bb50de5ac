"""
Ragged functional dataset: curves observed at their own time points
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from models import LongRecord, TimeRescale
from utils.exceptions import CovarianceInputError

logger = logging.getLogger(__name__)

DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class FunctionalDataset:
    """
    Collection of curves, each a set of (time, value) pairs on [0, 1].

    Curves keep their input order; times inside a curve keep file order.
    """
    curve_ids: List[str]
    times: List[np.ndarray]
    values: List[np.ndarray]
    rescale: Optional[TimeRescale] = field(default=None)

    def __post_init__(self):
        if not (len(self.curve_ids) == len(self.times) == len(self.values)):
            raise CovarianceInputError("curve_ids, times and values must have equal length")
        for cid, t, y in zip(self.curve_ids, self.times, self.values):
            if t.shape != y.shape or t.ndim != 1:
                raise CovarianceInputError(f"Curve {cid}: times and values must be 1-d arrays of equal length")
            if t.size and (t.min() < -DOMAIN_TOL or t.max() > 1 + DOMAIN_TOL):
                raise CovarianceInputError(f"Curve {cid}: times must lie in [0, 1]")

    @property
    def n_curves(self) -> int:
        return len(self.curve_ids)

    @property
    def sizes(self) -> List[int]:
        return [int(t.size) for t in self.times]

    @property
    def n_observations(self) -> int:
        return int(sum(self.sizes))

    def pooled_times(self) -> np.ndarray:
        return np.concatenate(self.times) if self.times else np.zeros(0)

    def pooled_values(self) -> np.ndarray:
        return np.concatenate(self.values) if self.values else np.zeros(0)

    def subset(self, indices: Sequence[int]) -> "FunctionalDataset":
        """Curves at `indices`, in that order"""
        return FunctionalDataset(
            curve_ids=[self.curve_ids[i] for i in indices],
            times=[self.times[i] for i in indices],
            values=[self.values[i] for i in indices],
            rescale=self.rescale,
        )

    @classmethod
    def from_arrays(cls, times: Sequence[Sequence[float]], values: Sequence[Sequence[float]],
                    curve_ids: Optional[Sequence[str]] = None) -> "FunctionalDataset":
        ids = list(curve_ids) if curve_ids is not None else [str(i) for i in range(len(times))]
        return cls(
            curve_ids=ids,
            times=[np.asarray(t, dtype=float).ravel() for t in times],
            values=[np.asarray(y, dtype=float).ravel() for y in values],
        )

    @classmethod
    def from_records(cls, records: Sequence[LongRecord], rescale_time: bool = False,
                     rescale: Optional[TimeRescale] = None) -> "FunctionalDataset":
        """
        Group long-format records by curve id.

        Args:
            records: Parsed input rows
            rescale_time: Min-max map the pooled times onto [0, 1]
            rescale: Apply this (previously recorded) map instead of computing one

        Raises:
            CovarianceInputError: Times outside [0, 1] when no rescaling is requested, or
                outside [t_min, t_max] of a stored rescale
        """
        if not records:
            raise CovarianceInputError("No observations")

        grouped: Dict[str, Tuple[List[float], List[float]]] = {}
        for rec in records:
            ts, ys = grouped.setdefault(rec.curve_id, ([], []))
            ts.append(rec.t)
            ys.append(rec.y)

        stored = rescale is not None
        if rescale is None and rescale_time:
            all_t = [rec.t for rec in records]
            t_min, t_max = min(all_t), max(all_t)
            if t_max <= t_min:
                raise CovarianceInputError("Cannot rescale time: all observation times are equal")
            rescale = TimeRescale(t_min=t_min, t_max=t_max)

        times, values = [], []
        for cid, (ts, ys) in grouped.items():
            t = np.asarray(ts, dtype=float)
            if rescale is not None:
                t = (t - rescale.t_min) / (rescale.t_max - rescale.t_min)
                if stored and (t.min() < -DOMAIN_TOL or t.max() > 1 + DOMAIN_TOL):
                    raise CovarianceInputError(
                        f"Curve {cid}: time values outside the fitted range [{rescale.t_min:g}, {rescale.t_max:g}]"
                    )
                t = np.clip(t, 0.0, 1.0)
            elif t.min() < 0.0 or t.max() > 1.0:
                raise CovarianceInputError(
                    f"Curve {cid}: time values outside [0, 1]; pass --rescale-time to map them"
                )
            times.append(t)
            values.append(np.asarray(ys, dtype=float))

        logger.info(f"Dataset with {len(grouped)} curves and {len(records)} observations")
        return cls(curve_ids=list(grouped), times=times, values=values, rescale=rescale)
