"""
Model Service - Single Responsibility: persist fitted covariance models as versioned JSON
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from models import CVRow, ModelFile, TimeRescale
from services.covariance_service import CovarianceEstimate
from services.eigen_service import EigenService
from services.mean_service import MeanEstimate
from services.spectral_service import GramFactor
from utils.exceptions import CovarianceInputError
from utils.io_utils import write_atomic

logger = logging.getLogger(__name__)


class ModelService:
    """Conversion between in-memory estimates and ModelFile documents"""

    @staticmethod
    def to_model_file(est: CovarianceEstimate, mean: Optional[MeanEstimate] = None,
                      cv_table: Optional[List[CVRow]] = None, rescale: Optional[TimeRescale] = None,
                      diagnostics: Optional[Dict[str, Any]] = None) -> ModelFile:
        """Snapshot an estimate (B stored full and symmetric, row-major)"""
        B = 0.5 * (est.B + est.B.T)
        diag = {
            "converged": est.converged,
            "final_objective": est.objective,
            "objective_trace_length": len(est.objective_trace),
        }
        diag.update(diagnostics or {})
        return ModelFile(
            kernel=est.spec,
            penalty=est.penalty,
            anchor_points=est.anchor_points.tolist(),
            rank_q=est.factor.rank_q,
            B=B.tolist(),
            M=est.factor.M.tolist(),
            M_pinv=est.factor.M_pinv.tolist(),
            lambda_used=est.lambda_used,
            iterations=est.iterations,
            numerical_rank=EigenService.numerical_rank(est),
            objective=est.objective,
            cv_table=cv_table or [],
            diagnostics=diag,
            mean=None if mean is None else mean.to_block(),
            time_rescale=rescale,
        )

    @staticmethod
    def from_model_file(model: ModelFile) -> Tuple[CovarianceEstimate, Optional[MeanEstimate]]:
        """
        Rebuild the estimate and mean from a model file.

        Raises:
            CovarianceInputError: Inconsistent matrix shapes
        """
        anchors = np.asarray(model.anchor_points, dtype=float)
        N, q = anchors.size, model.rank_q
        try:
            B = np.asarray(model.B, dtype=float).reshape(q, q)
            M = np.asarray(model.M, dtype=float).reshape(N, q)
            M_pinv = np.asarray(model.M_pinv, dtype=float).reshape(q, N)
        except ValueError as e:
            raise CovarianceInputError(f"Model matrices do not match rank_q={q}, N={N}: {e}") from e

        est = CovarianceEstimate(
            B=B,
            factor=GramFactor(M=M, M_pinv=M_pinv, rank_q=q),
            spec=model.kernel,
            anchor_points=anchors,
            lambda_used=model.lambda_used,
            iterations=model.iterations,
            penalty=model.penalty,
            objective=model.objective,
            converged=bool(model.diagnostics.get("converged", False)),
        )
        mean = None if model.mean is None else MeanEstimate.from_block(model.mean, model.kernel)
        return est, mean

    @staticmethod
    def save(path: Union[str, Path], model: ModelFile) -> Path:
        """Write the model atomically"""
        return write_atomic(path, model.model_dump_json(indent=1))

    @staticmethod
    def load(path: Union[str, Path]) -> ModelFile:
        """
        Read and validate a model file.

        Raises:
            CovarianceInputError: Missing file or schema violation
        """
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise CovarianceInputError(f"Cannot read model file {path}: {e}") from e
        try:
            return ModelFile.model_validate_json(text)
        except ValidationError as e:
            logger.error(f"Invalid model file {path}: {e.error_count()} error(s)")
            raise CovarianceInputError(f"Invalid model file {path}: {e.errors()[0]['msg']}") from e
