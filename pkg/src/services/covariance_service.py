"""
Covariance Service - Single Responsibility: fit a spectrally regularized covariance function

The estimate lives in the span of tensor products of kernel sections at the
pooled observation times. With K̃ = M Mᵀ (q = rank K̃) it is parametrized by a
symmetric q x q matrix B:

    C(s, t) = z(s)ᵀ (M⁺)ᵀ B M⁺ z(t),    z(t) = [K(t, T̃_1), ..., K(t, T̃_N)]ᵀ

and [C(T_ij, T_ik)]_jk = M_i B M_iᵀ for the rows M_i of curve i.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

import config
from models import CVRow, FitOptions, KernelSpec, PenaltyType
from models.dataset import FunctionalDataset
from penalties import BasePenalty, get_penalty
from services.kernel_service import KernelService
from services.mean_service import MeanEstimate, MeanService
from services.spectral_service import GramFactor, SpectralService
from utils.exceptions import CovarianceInputError, DegenerateVarianceError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_CV_GRID = np.logspace(-9, -1, 30)
VARIANCE_FLOOR = 1e-12
MAX_BACKTRACKS = 100
STOP_PATIENCE = 5


@dataclass
class _SizeGroup:
    """Curves sharing the same number of observations, stacked for batched products"""
    M: np.ndarray  # (g, m, q)
    Z: np.ndarray  # (g, m, m), diagonal zeroed


def _group_blocks(curve_blocks: Sequence[np.ndarray], Z_blocks: Sequence[np.ndarray]) -> List[_SizeGroup]:
    by_size = {}
    for idx, Mi in enumerate(curve_blocks):
        by_size.setdefault(Mi.shape[0], []).append(idx)
    groups = []
    # Fixed (sorted) reduction order keeps the sums reproducible
    for m in sorted(by_size):
        members = by_size[m]
        M = np.stack([curve_blocks[i] for i in members])
        Z = np.stack([Z_blocks[i] for i in members]).copy()
        diag = np.arange(m)
        Z[:, diag, diag] = 0.0
        groups.append(_SizeGroup(M=M, Z=Z))
    return groups


@dataclass
class DesignCache:
    """
    Everything the loss needs: raw-covariance blocks Z_i, the Gram factor and 1/Σ m_i(m_i - 1).

    `curve_blocks` are the M_i used by the loss; for training designs they are the
    factor's own blocks, for validation designs the held-out curves projected on
    the training basis.
    """
    Z_blocks: List[np.ndarray]
    factor: GramFactor
    normalizer: float
    curve_blocks: List[np.ndarray]
    anchor_points: np.ndarray
    curve_ids: List[str] = field(default_factory=list)
    dropped: int = 0
    spec: KernelSpec = field(default_factory=KernelSpec)
    groups: List[_SizeGroup] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.groups:
            self.groups = _group_blocks(self.curve_blocks, self.Z_blocks)

    @property
    def q(self) -> int:
        return self.factor.rank_q

    @property
    def n_curves(self) -> int:
        return len(self.Z_blocks)


@dataclass
class CovarianceEstimate:
    """Fitted covariance function Ĉ(s, t) = z(s)ᵀ (M⁺)ᵀ B M⁺ z(t)"""
    B: np.ndarray
    factor: GramFactor
    spec: KernelSpec
    anchor_points: np.ndarray
    lambda_used: float
    iterations: int
    objective_trace: List[float] = field(default_factory=list)
    penalty: PenaltyType = PenaltyType.TRACE_PSD
    objective: Optional[float] = None
    converged: bool = False
    theta_trace: List[float] = field(default_factory=list, repr=False)

    def basis_values(self, t: Union[Sequence[float], np.ndarray]) -> np.ndarray:
        """Rows M⁺ z(t) for each t: shape (len(t), q)"""
        Z = KernelService.kernel_matrix(self.spec, np.atleast_1d(t), self.anchor_points)
        return Z @ self.factor.M_pinv.T


@dataclass
class FoldDesign:
    """Training design and validation design of one cross-validation fold"""
    fold: int
    train: DesignCache
    validation: DesignCache


def _residual_blocks(data: FunctionalDataset, mean: Optional[MeanEstimate]) -> List[np.ndarray]:
    blocks = []
    for t, y in zip(data.times, data.values):
        resid = y if mean is None or mean.is_zero else y - MeanService.eval_mean_many(mean, t)
        blocks.append(np.outer(resid, resid))
    return blocks


def _usable_curves(data: FunctionalDataset) -> List[int]:
    return [i for i, size in enumerate(data.sizes) if size >= 2]


class CovarianceService:
    """Empirical-risk minimization over the representer parametrization"""

    @staticmethod
    def build_design(data: FunctionalDataset, mean: Optional[MeanEstimate], spec: KernelSpec,
                     rel_tol: float = config.RANK_TOL) -> DesignCache:
        """
        Assemble the finite-dimensional problem.

        Args:
            data: Functional dataset; curves with fewer than 2 observations are dropped
            mean: Mean estimate subtracted before forming Z_ijk (None means μ̂ = 0)
            spec: Kernel specification
            rel_tol: Eigenvalue cutoff for the Gram factor

        Returns:
            DesignCache over the retained curves

        Raises:
            CovarianceInputError: No curve has 2 or more observations
        """
        keep = _usable_curves(data)
        dropped = data.n_curves - len(keep)
        if not keep:
            raise CovarianceInputError("Loss undefined: m(m-1)=0 for every curve (need curves with >= 2 observations)")
        if dropped:
            logger.warning(f"Dropped {dropped} curve(s) with fewer than 2 observations")

        retained = data.subset(keep)
        anchors = retained.pooled_times()
        Ktilde = KernelService.gram(spec, anchors)
        factor = SpectralService.factor_gram(Ktilde, retained.sizes, rel_tol)
        Z_blocks = _residual_blocks(retained, mean)
        pairs = sum(m * (m - 1) for m in retained.sizes)

        logger.info(
            f"Design: {retained.n_curves} curves, N={anchors.size}, q={factor.rank_q}, pairs={pairs}"
        )
        return DesignCache(
            Z_blocks=Z_blocks,
            factor=factor,
            normalizer=1.0 / pairs,
            curve_blocks=factor.curve_blocks,
            anchor_points=anchors,
            curve_ids=retained.curve_ids,
            dropped=dropped,
            spec=spec,
        )

    @staticmethod
    def validation_design(data: FunctionalDataset, mean: Optional[MeanEstimate], spec: KernelSpec,
                          train: DesignCache) -> Optional[DesignCache]:
        """
        Design of held-out curves expressed in the training basis, so that the
        training loss evaluated on it scores Ĉ at the held-out time pairs.

        Returns:
            None when the held-out curves contribute no (j, k) pair
        """
        keep = _usable_curves(data)
        if not keep:
            return None
        held = data.subset(keep)
        Z_blocks = _residual_blocks(held, mean)
        blocks = []
        for t in held.times:
            Zt = KernelService.kernel_matrix(spec, t, train.anchor_points)
            blocks.append(Zt @ train.factor.M_pinv.T)
        pairs = sum(m * (m - 1) for m in held.sizes)
        return DesignCache(
            Z_blocks=Z_blocks,
            factor=train.factor,
            normalizer=1.0 / pairs,
            curve_blocks=blocks,
            anchor_points=train.anchor_points,
            curve_ids=held.curve_ids,
            spec=spec,
        )

    @staticmethod
    def loss_and_grad(cache: DesignCache, B: np.ndarray) -> Tuple[float, np.ndarray]:
        """
        ℓ̃(B) = c Σ_i ‖ρ(Z_i - M_i B M_iᵀ)‖²_F and ∇ℓ̃(B) = 2c Σ_i M_iᵀ ρ(M_i B M_iᵀ - Z_i) M_i,
        with c = 1/Σ m_i(m_i - 1) and ρ zeroing the diagonal.

        Raises:
            CovarianceInputError: B is not q x q
            NumericalError: Non-finite loss or gradient
        """
        B = np.asarray(B, dtype=float)
        q = cache.q
        if B.shape != (q, q):
            raise CovarianceInputError(f"B must be {q} x {q} (got {B.shape})")

        loss = 0.0
        grad = np.zeros((q, q))
        for group in cache.groups:
            fitted = (group.M @ B) @ group.M.transpose(0, 2, 1)
            resid = fitted - group.Z
            m = resid.shape[1]
            diag = np.arange(m)
            resid[:, diag, diag] = 0.0
            loss += float(np.sum(resid * resid))
            grad += np.tensordot(group.M, resid @ group.M, axes=([0, 1], [0, 1]))

        loss *= cache.normalizer
        grad = cache.normalizer * (grad + grad.T)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NumericalError("Non-finite loss or gradient")
        return loss, grad

    @staticmethod
    def objective(cache: DesignCache, B: np.ndarray, penalty: BasePenalty, lam: float) -> float:
        """ℓ̃(B) + λ Ψ(B) (+inf off the feasible set)"""
        loss, _ = CovarianceService.loss_and_grad(cache, B)
        return loss + _penalty_term(penalty, B, lam)

    @staticmethod
    def lambda_max(cache: DesignCache) -> float:
        """Spectral radius of ∇ℓ̃(0): the trace-penalized fit is 0 for any λ at or above it"""
        _, grad = CovarianceService.loss_and_grad(cache, np.zeros((cache.q, cache.q)))
        return SpectralService.spectral_radius(grad)

    @staticmethod
    def default_lambda_grid() -> np.ndarray:
        return DEFAULT_CV_GRID.copy()

    @staticmethod
    def apg_fit(cache: DesignCache, opts: FitOptions) -> CovarianceEstimate:
        """
        Accelerated proximal gradient with backtracking, in svec coordinates.

        Each outer step shrinks the Lipschitz estimate by α, then repeats
            θ_k = 2/[1 + {1 + 4L_k/(L_{k-1}θ²_{k-1})}^½]     (θ_{-1} = ∞)
            e_k = (1 - θ_k) b_k + θ_k b̄_k
            b_{k+1} = prox_{λ/L_k}(e_k - ∇ℓ̌(e_k)/L_k)
            b̄_{k+1} = {b_{k+1} - (1 - θ_k) b_k}/θ_k
        until L_k ≥ L̂ = 2|(e_k - b_{k+1})ᵀ(∇ℓ̌(b_{k+1}) - ∇ℓ̌(e_k))|/‖b_{k+1} - e_k‖²,
        otherwise L_k ← max(ηL_k, L̂).

        The optimality residual r_k = ‖∇ℓ̌(b_{k+1}) - ∇ℓ̌(e_k) + L_k(e_k - b_{k+1})‖
        is the norm of a subgradient of the objective at b_{k+1}. The fit stops once the
        relative objective change and r_k/max(1, ‖∇ℓ̌(b_{k+1})‖) both stay at or below
        opts.rel_tol for STOP_PATIENCE consecutive iterations (converged=True), or
        after opts.max_iter iterations. Returns the best-objective iterate.

        Raises:
            CovarianceInputError: B0 of the wrong shape
            NumericalError: Non-finite loss, gradient or objective (with iteration index)
        """
        penalty = get_penalty(opts.penalty)
        svec, svec_inv = SpectralService.svec, SpectralService.svec_inv
        q = cache.q
        lam = float(opts.lam)

        B0 = np.zeros((q, q)) if opts.B0 is None else np.asarray(opts.B0, dtype=float)
        if B0.shape != (q, q):
            raise CovarianceInputError(f"B0 must be {q} x {q} (got {B0.shape})")
        B0 = 0.5 * (B0 + B0.T)

        def loss_grad(b: np.ndarray, iteration: int) -> Tuple[float, np.ndarray]:
            try:
                loss, G = CovarianceService.loss_and_grad(cache, svec_inv(b))
            except NumericalError:
                raise NumericalError("Non-finite loss or gradient", iteration=iteration)
            return loss, svec(G)

        b = svec(B0)
        b_bar = b.copy()
        theta_prev = np.inf
        L_prev = float(opts.L_hat)

        f0, _ = loss_grad(b, 0)
        prev_obj = f0 + _penalty_term(penalty, B0, lam)
        best_obj, best_b = prev_obj, b.copy()
        trace: List[float] = []
        thetas: List[float] = []
        converged = False
        streak = 0
        iteration = 0

        for iteration in range(1, opts.max_iter + 1):
            L = opts.alpha * L_prev
            for _ in range(MAX_BACKTRACKS):
                if np.isinf(theta_prev):
                    theta = 1.0
                else:
                    theta = 2.0 / (1.0 + np.sqrt(1.0 + 4.0 * L / (L_prev * theta_prev ** 2)))
                e = (1.0 - theta) * b + theta * b_bar
                f_e, g_e = loss_grad(e, iteration)
                b_next = svec(penalty.prox(svec_inv(e - g_e / L), lam / L))
                f_next, g_next = loss_grad(b_next, iteration)

                step = b_next - e
                step_sq = float(step @ step)
                L_est = 0.0 if step_sq == 0.0 else 2.0 * abs(float(step @ (g_next - g_e))) / step_sq
                if not np.isfinite(L_est):
                    raise NumericalError("Non-finite Lipschitz estimate", iteration=iteration)
                if L >= L_est:
                    break
                L = max(opts.eta * L, L_est)
            else:
                logger.warning(f"Backtracking did not settle after {MAX_BACKTRACKS} trials at iteration {iteration}")

            residual = float(np.linalg.norm(g_next - g_e - L * step))
            b_bar = (b_next - (1.0 - theta) * b) / theta
            b = b_next
            theta_prev, L_prev = theta, L
            thetas.append(theta)

            obj = f_next + _penalty_term(penalty, svec_inv(b), lam)
            if not np.isfinite(obj):
                raise NumericalError("Non-finite objective", iteration=iteration)
            trace.append(obj)
            if obj < best_obj:
                best_obj, best_b = obj, b.copy()

            logger.debug(f"APG iter {iteration}: obj={obj:.10g}, residual={residual:.3e}, L={L:.4g}, theta={theta:.4g}")
            change = abs(prev_obj - obj) / max(abs(prev_obj), np.finfo(float).tiny)
            stationary = residual <= opts.rel_tol * max(1.0, float(np.linalg.norm(g_next)))
            streak = streak + 1 if change <= opts.rel_tol and stationary else 0
            prev_obj = obj
            if streak >= STOP_PATIENCE:
                converged = True
                break

        if not converged:
            logger.info(f"APG reached max_iter={opts.max_iter} (lambda={lam:.3e}, penalty={penalty.name})")

        B_hat = svec_inv(best_b)
        return CovarianceEstimate(
            B=B_hat,
            factor=cache.factor,
            spec=cache.spec,
            anchor_points=cache.anchor_points,
            lambda_used=lam,
            iterations=iteration,
            objective_trace=trace,
            penalty=penalty.penalty_type,
            objective=best_obj,
            converged=converged,
            theta_trace=thetas,
        )

    @staticmethod
    def fit_covariance(data: FunctionalDataset, mean: Optional[MeanEstimate], spec: KernelSpec,
                       opts: FitOptions, rel_tol: float = config.RANK_TOL) -> CovarianceEstimate:
        """build_design followed by apg_fit"""
        try:
            cache = CovarianceService.build_design(data, mean, spec, rel_tol)
            return CovarianceService.apg_fit(cache, opts)
        except NumericalError as e:
            logger.error(f"Error fitting covariance ({opts.penalty.value}, lambda={opts.lam:.3e}): {e}")
            raise

    @staticmethod
    def build_folds(data: FunctionalDataset, mean: Optional[MeanEstimate], spec: KernelSpec,
                    folds: int = 5, seed: int = 0, rel_tol: float = config.RANK_TOL) -> List[FoldDesign]:
        """
        Partition curves (not points) into folds by a seeded shuffle and build
        each fold's training and validation designs.

        Raises:
            CovarianceInputError: folds < 2, too few usable curves, or every fold skipped
        """
        if folds < 2:
            raise CovarianceInputError(f"Cross-validation needs at least 2 folds (got {folds})")
        eligible = _usable_curves(data)
        if len(eligible) < folds:
            raise CovarianceInputError(f"{len(eligible)} usable curve(s) cannot fill {folds} folds")

        rng = np.random.default_rng(seed)
        shuffled = rng.permutation(eligible)
        plan = []
        for fold, held_out in enumerate(np.array_split(shuffled, folds)):
            held_set = set(int(i) for i in held_out)
            train_idx = [i for i in eligible if i not in held_set]
            val_idx = sorted(held_set)
            train = CovarianceService.build_design(data.subset(train_idx), mean, spec, rel_tol)
            validation = CovarianceService.validation_design(data.subset(val_idx), mean, spec, train)
            if validation is None:
                logger.warning(f"Fold {fold} has no usable validation pairs; skipped")
                continue
            plan.append(FoldDesign(fold=fold, train=train, validation=validation))

        if not plan:
            raise CovarianceInputError("Every cross-validation fold was skipped")
        return plan

    @staticmethod
    def cross_validate(data: FunctionalDataset, mean: Optional[MeanEstimate], spec: KernelSpec,
                       opts_template: FitOptions, lambda_grid: Optional[Sequence[float]] = None,
                       folds: int = 5, seed: int = 0, plan: Optional[List[FoldDesign]] = None,
                       rel_tol: float = config.RANK_TOL) -> Tuple[float, List[CVRow]]:
        """
        Curve-level K-fold cross-validation of λ.

        For every fold the λ path is fitted from the largest value down, each fit
        warm-started at the previous solution, and scored by the training loss on
        the held-out curves. Ties in mean validation loss go to the larger λ.

        Args:
            plan: Precomputed folds (shared across penalties); built from data when None

        Returns:
            (best_lambda, cv_table) with one row per (fold, λ)
        """
        grid = CovarianceService.default_lambda_grid() if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
        if grid.size == 0 or np.any(grid < 0):
            raise CovarianceInputError("lambda_grid must be non-empty and non-negative")
        grid_desc = np.sort(grid)[::-1]
        if plan is None:
            plan = CovarianceService.build_folds(data, mean, spec, folds, seed, rel_tol)

        rows: List[CVRow] = []
        losses = np.zeros((len(plan), grid_desc.size))
        for f_idx, fold in enumerate(plan):
            warm = None
            for l_idx, lam in enumerate(grid_desc):
                est = CovarianceService.apg_fit(fold.train, opts_template.with_lambda(lam, warm))
                val_loss, _ = CovarianceService.loss_and_grad(fold.validation, est.B)
                losses[f_idx, l_idx] = val_loss
                rows.append(CVRow(fold=fold.fold, lam=float(lam), loss=val_loss, iterations=est.iterations))
                warm = est.B

        mean_loss = losses.mean(axis=0)
        best = int(np.argmin(mean_loss))  # first minimum = largest λ among ties
        best_lambda = float(grid_desc[best])
        logger.info(
            f"CV ({opts_template.penalty.value}): best lambda={best_lambda:.3e}, "
            f"mean validation loss={mean_loss[best]:.5g} over {len(plan)} fold(s)"
        )
        return best_lambda, rows

    @staticmethod
    def evaluate(est: CovarianceEstimate, s: float, t: float) -> float:
        """Ĉ(s, t)"""
        Fs = est.basis_values([s])
        Ft = Fs if s == t else est.basis_values([t])
        return float((Fs @ est.B @ Ft.T)[0, 0])

    @staticmethod
    def evaluate_grid(est: CovarianceEstimate, s_values: Sequence[float],
                      t_values: Optional[Sequence[float]] = None) -> np.ndarray:
        """Matrix [Ĉ(s_i, t_j)]; symmetric when t_values is omitted"""
        Fs = est.basis_values(s_values)
        if t_values is None:
            C = Fs @ est.B @ Fs.T
            return 0.5 * (C + C.T)
        return Fs @ est.B @ est.basis_values(t_values).T

    @staticmethod
    def correlation(est: CovarianceEstimate, s: float, t: float, floor: float = VARIANCE_FLOOR) -> float:
        """
        Ĉ(s, t)/{Ĉ(s, s)Ĉ(t, t)}^½

        Raises:
            DegenerateVarianceError: Ĉ(s, s) or Ĉ(t, t) at or below the floor
        """
        var_s = CovarianceService.evaluate(est, s, s)
        if var_s <= floor:
            raise DegenerateVarianceError(s, var_s, floor)
        if s == t:
            return 1.0
        var_t = CovarianceService.evaluate(est, t, t)
        if var_t <= floor:
            raise DegenerateVarianceError(t, var_t, floor)
        return CovarianceService.evaluate(est, s, t) / np.sqrt(var_s * var_t)

    @staticmethod
    def correlation_grid(est: CovarianceEstimate, grid: Sequence[float], floor: float = VARIANCE_FLOOR) -> np.ndarray:
        """Correlation matrix on a grid; NaN wherever either variance is at or below the floor"""
        C = CovarianceService.evaluate_grid(est, grid)
        var = np.diag(C).copy()
        ok = var > floor
        scale = np.where(ok, np.sqrt(np.where(ok, var, 1.0)), np.nan)
        R = C / np.outer(scale, scale)
        np.fill_diagonal(R, np.where(ok, 1.0, np.nan))
        return R


def _penalty_term(penalty: BasePenalty, B: np.ndarray, lam: float) -> float:
    value = penalty.value(B)
    if lam == 0.0:
        return 0.0 if np.isfinite(value) else float("inf")
    return lam * value
