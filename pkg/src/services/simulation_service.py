"""
Simulation Service - Single Responsibility: synthetic sparse functional data, ISE, and the estimator comparison runner
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

import config
from models import (
    ExperimentReport,
    FitOptions,
    KernelSpec,
    MethodSummary,
    PenaltyType,
    ReplicateRecord,
    SimConfig,
)
from models.dataset import FunctionalDataset
from services.covariance_service import CovarianceService
from services.eigen_service import EigenService
from services.kernel_service import KernelService, QuadratureRule
from services.mean_service import MeanService
from utils.exceptions import CovarianceError
from utils.logging_utils import close_run_logger, setup_run_logger, summarize_options

logger = logging.getLogger(__name__)

CovarianceCallable = Callable[[np.ndarray, np.ndarray], np.ndarray]

REPORT_COLUMNS = (
    "method", "n_success", "success_rate", "aise", "aise_se", "aise_x1e3", "aise_se_x1e3", "mean_rank",
)


def true_mean(t: Sequence[float]) -> np.ndarray:
    """μ₀(t) = 3 sin{3π(t + 0.5)} + 2t³"""
    t = np.asarray(t, dtype=float)
    return 3.0 * np.sin(3.0 * np.pi * (t + 0.5)) + 2.0 * t ** 3


def true_eigenfunctions(t: Sequence[float], L: int) -> np.ndarray:
    """Columns √2cos(2πt), √2sin(2πt), √2cos(4πt), √2sin(4πt), truncated to L"""
    if L not in (2, 4):
        raise ValueError(f"L must be 2 or 4 (got {L})")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    root2 = np.sqrt(2.0)
    columns = [
        root2 * np.cos(2 * np.pi * t),
        root2 * np.sin(2 * np.pi * t),
        root2 * np.cos(4 * np.pi * t),
        root2 * np.sin(4 * np.pi * t),
    ]
    return np.column_stack(columns[:L])


@dataclass(frozen=True)
class TrueCovariance:
    """C₀(s, t) = Σ_{k≤L} (k+1)^-2 φ_k(s) φ_k(t)"""
    L: int

    @property
    def eigenvalues(self) -> np.ndarray:
        return (np.arange(1, self.L + 1) + 1.0) ** -2

    def __call__(self, s: Sequence[float], t: Sequence[float]) -> np.ndarray:
        Phi_s = true_eigenfunctions(s, self.L)
        Phi_t = true_eigenfunctions(t, self.L)
        return (Phi_s * self.eigenvalues) @ Phi_t.T

    def mean(self, t: Sequence[float]) -> np.ndarray:
        """μ₀ paired with this covariance"""
        return true_mean(t)


def replicate_rng(seed: int, rep_index: int, stream: int = 0) -> np.random.Generator:
    """Counter-based stream for one replicate, independent of scheduling order"""
    seq = np.random.SeedSequence(seed, spawn_key=(rep_index, stream))
    return np.random.Generator(np.random.Philox(seq))


class SimulationService:
    """Data generator, error metric and experiment runner"""

    @staticmethod
    def generate_dataset(cfg: SimConfig, rep_index: int) -> Tuple[FunctionalDataset, TrueCovariance]:
        """
        Draw one dataset: T_ij ~ U[0, 1], X_i = μ₀ + Σ_k (k+1)^-1 ξ_ik φ_k, Y_ij = X_i(T_ij) + ε_ij.

        Returns:
            (dataset, true covariance)
        """
        rng = replicate_rng(cfg.seed, rep_index)
        truth = TrueCovariance(L=cfg.L)

        times = rng.uniform(0.0, 1.0, size=(cfg.n, cfg.m))
        xi = rng.standard_normal(size=(cfg.n, cfg.L))
        noise = rng.standard_normal(size=(cfg.n, cfg.m)) * np.sqrt(cfg.noise_var)

        score_sd = 1.0 / (np.arange(1, cfg.L + 1) + 1.0)
        values = np.empty_like(times)
        for i in range(cfg.n):
            phi = true_eigenfunctions(times[i], cfg.L)
            values[i] = truth.mean(times[i]) + phi @ (score_sd * xi[i]) + noise[i]

        width = len(str(cfg.n))
        ids = [f"c{i + 1:0{width}d}" for i in range(cfg.n)]
        return FunctionalDataset.from_arrays(list(times), list(values), ids), truth

    @staticmethod
    def aise(est_eval: CovarianceCallable, c0_eval: CovarianceCallable, rule: QuadratureRule) -> float:
        """∫∫ (Ĉ - C₀)² over [0, 1]² by the tensor-product rule"""
        nodes = rule.nodes
        diff = est_eval(nodes, nodes) - c0_eval(nodes, nodes)
        return float(rule.weights @ (diff ** 2) @ rule.weights)

    @staticmethod
    def run_replicate(cfg: SimConfig, rep_index: int, rule: QuadratureRule,
                      run_logger: Optional[logging.Logger] = None) -> List[ReplicateRecord]:
        """
        Generate, smooth the mean, cross-validate and fit every method on one dataset.

        All methods share the curve folds and the full-data design. Failures are
        recorded per method; a failed mean fit fails every method of the replicate.
        """
        run_logger = run_logger or logger
        spec = KernelSpec()
        grid = cfg.lambda_grid
        data, truth = SimulationService.generate_dataset(cfg, rep_index)

        try:
            mean = MeanService.zero_mean(spec) if cfg.use_true_mean_zero else MeanService.fit_mean(data, spec)
            if cfg.use_true_mean_zero:
                data = _subtract_true_mean(data)
            fold_seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(rep_index, 1)).generate_state(1)[0])
            plan = CovarianceService.build_folds(data, mean, spec, cfg.folds, fold_seed)
            full = CovarianceService.build_design(data, mean, spec)
        except (CovarianceError, linalg.LinAlgError, ValueError) as e:
            run_logger.warning(f"Replicate {rep_index}: setup failed: {e}")
            return [
                ReplicateRecord(replicate=rep_index, method=method, success=False, error=str(e))
                for method in cfg.methods
            ]

        records = []
        for method in cfg.methods:
            opts = FitOptions(penalty=method, lam=0.0, max_iter=config.MAX_ITER, rel_tol=config.REL_TOL)
            try:
                best_lam, _ = CovarianceService.cross_validate(data, mean, spec, opts, grid, plan=plan)
                est = CovarianceService.apg_fit(full, opts.with_lambda(best_lam))
                ise = SimulationService.aise(
                    lambda s, t: CovarianceService.evaluate_grid(est, s, t), truth, rule
                )
                rank = EigenService.numerical_rank(est)
                records.append(ReplicateRecord(
                    replicate=rep_index, method=method, success=True, ise=ise, rank=rank,
                    lam=best_lam, iterations=est.iterations,
                ))
                run_logger.info(
                    f"Replicate {rep_index} {method.value}: ISE={ise:.4e}, rank={rank}, lambda={best_lam:.3e}"
                )
            except (CovarianceError, linalg.LinAlgError, ValueError) as e:
                run_logger.warning(f"Replicate {rep_index} {method.value} failed: {e}")
                records.append(ReplicateRecord(replicate=rep_index, method=method, success=False, error=str(e)))
        return records

    @staticmethod
    def summarize(cfg: SimConfig, records: Sequence[ReplicateRecord]) -> List[MethodSummary]:
        """Per-method AISE, its standard error SD/√n_success, mean rank and success rate"""
        summaries = []
        for method in cfg.methods:
            mine = [r for r in records if r.method == method]
            ok = [r for r in mine if r.success]
            ises = np.array([r.ise for r in ok], dtype=float)
            ranks = np.array([r.rank for r in ok], dtype=float)
            n_ok = len(ok)
            summaries.append(MethodSummary(
                method=method,
                n_success=n_ok,
                success_rate=n_ok / len(mine) if mine else 0.0,
                aise=float(ises.mean()) if n_ok else None,
                aise_se=float(ises.std(ddof=1) / np.sqrt(n_ok)) if n_ok > 1 else None,
                mean_rank=float(ranks.mean()) if n_ok else None,
            ))
        return summaries

    @staticmethod
    def run_experiment(cfg: SimConfig, run_id: Optional[str] = None) -> ExperimentReport:
        """
        Run every replicate (concurrently, up to cfg.max_workers) and aggregate.

        Replicate streams are keyed by (seed, replicate index), and records are
        sorted by (replicate, method) before aggregation, so the report does not
        depend on the worker count.
        """
        run_id = run_id or f"sim_{datetime.now().strftime('%Y%m%d_%H%M%S')}_{cfg.seed}"
        run_logger = setup_run_logger(run_id)
        run_logger.info(f"Experiment {run_id}: {summarize_options(cfg.model_dump(mode='json'))}")
        logger.info(f"Starting experiment {run_id}: {cfg.n_reps} replicate(s), methods="
                    f"{[m.value for m in cfg.methods]}, workers={cfg.max_workers}")

        rule = KernelService.make_quadrature(cfg.quad_nodes)
        try:
            with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
                batches = list(pool.map(
                    lambda rep: SimulationService.run_replicate(cfg, rep, rule, run_logger),
                    range(cfg.n_reps),
                ))
        finally:
            close_run_logger(run_logger)

        order = {method: idx for idx, method in enumerate(cfg.methods)}
        records = sorted((r for batch in batches for r in batch), key=lambda r: (r.replicate, order[r.method]))
        summaries = SimulationService.summarize(cfg, records)
        for s in summaries:
            aise = f"{s.aise:.4e}" if s.aise is not None else "n/a"
            logger.info(f"{s.method.value}: AISE={aise}, success={s.n_success}/{cfg.n_reps}, mean rank={s.mean_rank}")
        return ExperimentReport(config=cfg, summaries=summaries, records=records)

    @staticmethod
    def report_table(report: ExperimentReport) -> Tuple[Tuple[str, ...], List[list]]:
        """Header and rows of the per-method CSV report"""
        rows = []
        for s in report.summaries:
            rows.append([
                s.method.value,
                s.n_success,
                s.success_rate,
                s.aise,
                s.aise_se,
                None if s.aise is None else s.aise * 1e3,
                None if s.aise_se is None else s.aise_se * 1e3,
                s.mean_rank,
            ])
        return REPORT_COLUMNS, rows


def _subtract_true_mean(data: FunctionalDataset) -> FunctionalDataset:
    """Center the observations with the known μ₀"""
    values = [y - true_mean(t) for t, y in zip(data.times, data.values)]
    return FunctionalDataset(curve_ids=data.curve_ids, times=data.times, values=values, rescale=data.rescale)
