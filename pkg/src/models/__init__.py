"""
Pydantic models for options, configurations, records and the persisted model file
"""
from enum import Enum
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class PenaltyType(str, Enum):
    """Spectral penalty, with or without the positive-semidefinite constraint"""
    TRACE_PSD = "trace_psd"
    TRACE_SYM = "trace_sym"
    HS_PSD = "hs_psd"
    HS_SYM = "hs_sym"

    @property
    def psd(self) -> bool:
        return self in (PenaltyType.TRACE_PSD, PenaltyType.HS_PSD)

    @classmethod
    def from_flags(cls, penalty: str, psd: bool) -> "PenaltyType":
        """Map CLI-style (`trace`|`hs`, psd flag) to a PenaltyType"""
        key = f"{penalty.lower()}_{'psd' if psd else 'sym'}"
        return cls(key)


class KernelSpec(BaseModel):
    """Second-order Sobolev-Hilbert space on [0, 1]"""
    model_config = ConfigDict(frozen=True)

    order: Literal[2] = Field(2, description="Sobolev order r (only r=2 is implemented)")
    domain: tuple[float, float] = Field((0.0, 1.0), description="Time domain")

    @model_validator(mode='after')
    def validate_domain(self):
        if tuple(self.domain) != (0.0, 1.0):
            raise ValueError("Only the unit interval [0, 1] is supported; rescale times first")
        return self


class FitOptions(BaseModel):
    """Options for the accelerated proximal gradient fit"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    penalty: PenaltyType = Field(PenaltyType.TRACE_PSD, description="Penalty and constraint")
    lam: float = Field(..., ge=0, description="Regularization parameter lambda")
    B0: Optional[Any] = Field(None, description="Initial q x q symmetric matrix (default 0)")
    L_hat: float = Field(1.0, gt=0, description="Initial Lipschitz estimate")
    eta: float = Field(2.0, gt=1, description="Backtracking growth factor (> 1)")
    alpha: float = Field(0.9, gt=0, lt=1, description="Per-iteration Lipschitz shrink factor (< 1)")
    max_iter: int = Field(5000, ge=1, description="Maximum APG iterations")
    rel_tol: float = Field(1e-8, gt=0, description="Optimality residual tolerance, relative to max(1, gradient norm)")

    def with_lambda(self, lam: float, B0: Any = None) -> "FitOptions":
        """Copy with a new lambda (and optional warm start)"""
        return self.model_copy(update={"lam": float(lam), "B0": B0})


class LongRecord(BaseModel):
    """One observation of the long-format input"""
    curve_id: str = Field(..., min_length=1, description="Curve identifier")
    t: float = Field(..., allow_inf_nan=False, description="Observation time")
    y: float = Field(..., allow_inf_nan=False, description="Observed value")


class SimConfig(BaseModel):
    """Simulation settings"""
    n: int = Field(200, ge=1, description="Curves per dataset")
    m: int = Field(5, ge=1, description="Observations per curve")
    L: Literal[2, 4] = Field(2, description="True covariance rank")
    noise_var: float = Field(0.01, ge=0, description="Measurement error variance")
    n_reps: int = Field(30, ge=1, description="Number of replicates")
    seed: int = Field(20240101, ge=0, lt=2**64, description="Master seed")
    methods: List[PenaltyType] = Field(default_factory=lambda: list(PenaltyType), description="Estimators to compare")
    use_true_mean_zero: bool = Field(False, description="Skip mean smoothing and center with mu = 0")
    folds: int = Field(5, ge=2, description="Cross-validation folds")
    lambda_grid: Optional[List[float]] = Field(None, description="CV grid (default: 30 log-spaced values in [1e-9, 1e-1])")
    quad_nodes: int = Field(128, ge=2, description="Quadrature nodes for ISE")
    max_workers: int = Field(1, ge=1, le=64, description="Replicates fitted concurrently")

    @model_validator(mode='after')
    def validate_methods(self):
        if not self.methods:
            raise ValueError("At least one method must be given")
        if self.lambda_grid is not None and (not self.lambda_grid or min(self.lambda_grid) <= 0):
            raise ValueError("lambda_grid must be non-empty and positive")
        return self


class CVRow(BaseModel):
    """One (fold, lambda) cell of a cross-validation table"""
    fold: int
    lam: float
    loss: Optional[float] = None
    iterations: int = 0


class ReplicateRecord(BaseModel):
    """Outcome of one method on one simulated dataset"""
    replicate: int
    method: PenaltyType
    success: bool
    ise: Optional[float] = None
    rank: Optional[int] = None
    lam: Optional[float] = None
    iterations: Optional[int] = None
    error: Optional[str] = None


class MethodSummary(BaseModel):
    """Aggregate over replicates for one method"""
    method: PenaltyType
    n_success: int
    success_rate: float
    aise: Optional[float] = None
    aise_se: Optional[float] = None
    mean_rank: Optional[float] = None


class ExperimentReport(BaseModel):
    """Simulation report: per-method summaries and replicate-level records"""
    config: SimConfig
    summaries: List[MethodSummary]
    records: List[ReplicateRecord]


class TimeRescale(BaseModel):
    """Min-max map from original time units to [0, 1]"""
    t_min: float
    t_max: float

    def forward(self, t: float) -> float:
        return (t - self.t_min) / (self.t_max - self.t_min)

    def inverse(self, u: float) -> float:
        return self.t_min + u * (self.t_max - self.t_min)


class MeanBlock(BaseModel):
    """Serialized mean estimate"""
    anchor_points: List[float]
    coefficients: List[float]
    gcv_lambda: Optional[float] = None


class ModelFile(BaseModel):
    """Self-contained fitted covariance model"""
    format_version: Literal[1] = 1
    kernel: KernelSpec = Field(default_factory=KernelSpec)
    penalty: PenaltyType
    anchor_points: List[float]
    rank_q: int
    B: List[List[float]] = Field(..., description="q x q coefficient matrix, row-major, full symmetric")
    M: List[List[float]] = Field(..., description="N x q Gram factor rows")
    M_pinv: List[List[float]] = Field(..., description="q x N pseudo-inverse rows")
    lambda_used: float
    iterations: int
    numerical_rank: int
    objective: Optional[float] = None
    cv_table: List[CVRow] = Field(default_factory=list)
    diagnostics: Dict[str, Any] = Field(default_factory=dict)
    mean: Optional[MeanBlock] = None
    time_rescale: Optional[TimeRescale] = None
