"""
Unit tests for SimulationService
"""
import logging
import os
import pytest
import sys
from pathlib import Path
from unittest.mock import patch

import numpy as np

# Add src to path for testing
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from models import ExperimentReport, FitOptions, KernelSpec, PenaltyType, ReplicateRecord, SimConfig
from services.covariance_service import CovarianceService
from services.kernel_service import KernelService
from services.mean_service import MeanService
from services.simulation_service import (
    REPORT_COLUMNS,
    SimulationService,
    TrueCovariance,
    true_eigenfunctions,
    true_mean,
)

RUN_SLOW = os.getenv("COVEST_RUN_SLOW") == "1"
slow = pytest.mark.skipif(not RUN_SLOW, reason="set COVEST_RUN_SLOW=1 to run desk-scale experiments")

QUICK_GRID = [1e-6, 1e-5, 1e-4, 1e-3]


def quick_config(**overrides) -> SimConfig:
    settings = dict(n=20, m=3, L=2, n_reps=1, seed=7, methods=[PenaltyType.TRACE_PSD],
                    folds=2, lambda_grid=QUICK_GRID, quad_nodes=32)
    settings.update(overrides)
    return SimConfig(**settings)


def run(cfg: SimConfig) -> ExperimentReport:
    with patch("services.simulation_service.setup_run_logger") as mock_logger:
        mock_logger.return_value = logging.getLogger("test_simulation_run")
        return SimulationService.run_experiment(cfg, run_id="test")


class TestTruth:
    """Test cases for the true mean and covariance"""

    def test_eigenfunctions_orthonormal(self):
        """Test φ_1..φ_4 are L2-orthonormal"""
        rule = KernelService.make_quadrature(64)
        Phi = true_eigenfunctions(rule.nodes, 4)
        np.testing.assert_allclose((Phi * rule.weights[:, None]).T @ Phi, np.eye(4), atol=1e-12)

    def test_covariance_rank(self):
        """Test the grid matrix of C₀ on 50 points has rank L"""
        grid = np.linspace(0, 1, 50)
        for L in (2, 4):
            assert np.linalg.matrix_rank(TrueCovariance(L=L)(grid, grid), tol=1e-10) == L

    def test_mean_formula(self):
        """Test μ₀(0) = 3 sin(1.5π) = -3 and μ₀(0.5) = 3 sin(3π) + 0.25"""
        np.testing.assert_allclose(true_mean([0.0, 0.5]), [-3.0, 0.25], atol=1e-12)

    def test_invalid_rank(self):
        """Test only L in {2, 4} is supported"""
        with pytest.raises(ValueError, match="L must be 2 or 4"):
            true_eigenfunctions([0.1], 3)


class TestGenerateDataset:
    """Test cases for the data generator"""

    def test_shapes_and_domain(self):
        """Test n curves of m points on [0, 1]"""
        data, truth = SimulationService.generate_dataset(quick_config(n=12, m=5), 0)
        assert data.n_curves == 12
        assert data.sizes == [5] * 12
        assert 0.0 <= data.pooled_times().min() and data.pooled_times().max() <= 1.0
        assert truth.L == 2

    def test_deterministic_per_replicate(self):
        """Test identical (seed, replicate) gives identical data and other replicates differ"""
        cfg = quick_config()
        a, _ = SimulationService.generate_dataset(cfg, 3)
        b, _ = SimulationService.generate_dataset(cfg, 3)
        c, _ = SimulationService.generate_dataset(cfg, 4)
        np.testing.assert_array_equal(a.pooled_values(), b.pooled_values())
        assert not np.array_equal(a.pooled_values(), c.pooled_values())

    def test_moments_match_truth(self):
        """Test E[Y - μ₀(T)] = 0 and E[(Y - μ₀(T))²] = Σ (k+1)^-2 without noise"""
        cfg = quick_config(n=20000, m=1, noise_var=0.0)
        data, truth = SimulationService.generate_dataset(cfg, 0)
        resid = data.pooled_values() - true_mean(data.pooled_times())
        se_mean = resid.std(ddof=1) / np.sqrt(resid.size)
        assert abs(resid.mean()) <= 4 * se_mean
        sq = resid ** 2
        se_sq = sq.std(ddof=1) / np.sqrt(sq.size)
        assert abs(sq.mean() - truth.eigenvalues.sum()) <= 4 * se_sq

    def test_noise_variance(self):
        """Test the measurement error adds noise_var to the pointwise variance"""
        cfg = quick_config(n=20000, m=1, noise_var=0.25)
        data, truth = SimulationService.generate_dataset(cfg, 1)
        sq = (data.pooled_values() - true_mean(data.pooled_times())) ** 2
        se = sq.std(ddof=1) / np.sqrt(sq.size)
        assert abs(sq.mean() - (truth.eigenvalues.sum() + 0.25)) <= 4 * se


class TestAise:
    """Test cases for the integrated squared error"""

    def setup_method(self):
        self.rule = KernelService.make_quadrature(64)
        self.truth = TrueCovariance(L=2)

    def test_exact_estimate(self):
        """Test ISE(C₀, C₀) = 0"""
        assert SimulationService.aise(self.truth, self.truth, self.rule) == 0.0

    def test_constant_offset(self):
        """Test ISE(C₀ + c, C₀) = c²"""
        shifted = lambda s, t: self.truth(s, t) + 0.3
        assert SimulationService.aise(shifted, self.truth, self.rule) == pytest.approx(0.09, rel=1e-12)

    def test_refinement_agrees(self):
        """Test 128- and 512-node rules agree on a fitted estimate"""
        data, truth = SimulationService.generate_dataset(quick_config(n=15, m=4), 0)
        est = CovarianceService.fit_covariance(
            data, MeanService.fit_mean(data, KernelSpec()), KernelSpec(),
            FitOptions(penalty=PenaltyType.TRACE_PSD, lam=1e-4),
        )
        fitted = lambda s, t: CovarianceService.evaluate_grid(est, s, t)
        coarse = SimulationService.aise(fitted, truth, KernelService.make_quadrature(128))
        fine = SimulationService.aise(fitted, truth, KernelService.make_quadrature(512))
        assert coarse == pytest.approx(fine, rel=1e-6)


class TestRunExperiment:
    """Test cases for the experiment runner"""

    def test_smoke(self):
        """Test one replicate of one method yields one finite record"""
        report = run(quick_config())
        assert len(report.records) == 1
        record = report.records[0]
        assert record.success
        assert np.isfinite(record.ise) and record.ise >= 0
        assert record.rank >= 0
        assert record.lam in QUICK_GRID
        summary = report.summaries[0]
        assert summary.n_success == 1 and summary.success_rate == 1.0
        assert summary.aise == pytest.approx(record.ise)
        assert summary.aise_se is None

    def test_run_log_file_closed(self, tmp_path):
        """Test the per-run log is written and its file handler detached when the run ends"""
        with patch("utils.logging_utils.RUN_LOGS_DIR", tmp_path):
            SimulationService.run_experiment(quick_config(), run_id="handles")
        run_logger = logging.getLogger("run_logger_handles")
        assert not any(isinstance(h, logging.FileHandler) for h in run_logger.handlers)
        assert "Experiment handles" in (tmp_path / "handles.log").read_text(encoding="utf-8")

    def test_run_log_closed_on_failure(self, tmp_path):
        """Test the handler is released even when a replicate raises"""
        with patch("utils.logging_utils.RUN_LOGS_DIR", tmp_path), \
                patch("services.simulation_service.SimulationService.run_replicate", side_effect=RuntimeError("boom")):
            with pytest.raises(RuntimeError, match="boom"):
                SimulationService.run_experiment(quick_config(), run_id="crashed")
        assert logging.getLogger("run_logger_crashed").handlers == []

    def test_reproducible_and_worker_independent(self):
        """Test identical configs give identical reports regardless of worker count"""
        methods = [PenaltyType.TRACE_PSD, PenaltyType.HS_SYM]
        serial = run(quick_config(n_reps=2, methods=methods, max_workers=1))
        parallel = run(quick_config(n_reps=2, methods=methods, max_workers=2))
        assert [r.model_dump() for r in serial.records] == [r.model_dump() for r in parallel.records]
        assert [s.model_dump() for s in serial.summaries] == [s.model_dump() for s in parallel.summaries]
        assert [(r.replicate, r.method) for r in serial.records] == [
            (0, PenaltyType.TRACE_PSD), (0, PenaltyType.HS_SYM), (1, PenaltyType.TRACE_PSD), (1, PenaltyType.HS_SYM)
        ]

    def test_failures_are_recorded(self):
        """Test a failing fit is kept as an unsuccessful record"""
        with patch("services.simulation_service.CovarianceService.apg_fit", side_effect=np.linalg.LinAlgError("boom")):
            report = run(quick_config())
        record = report.records[0]
        assert not record.success
        assert "boom" in record.error
        assert report.summaries[0].n_success == 0
        assert report.summaries[0].aise is None

    def test_summary_standard_error(self):
        """Test AISE standard error is SD/√n over successful replicates"""
        cfg = quick_config(n_reps=3)
        records = [
            ReplicateRecord(replicate=i, method=PenaltyType.TRACE_PSD, success=True, ise=v, rank=2)
            for i, v in enumerate([1.0, 2.0, 4.0])
        ]
        summary = SimulationService.summarize(cfg, records)[0]
        assert summary.aise == pytest.approx(7.0 / 3.0)
        assert summary.aise_se == pytest.approx(np.std([1.0, 2.0, 4.0], ddof=1) / np.sqrt(3))
        assert summary.mean_rank == 2.0

    def test_report_table(self):
        """Test CSV rows carry the x1e3 columns"""
        report = run(quick_config())
        header, rows = SimulationService.report_table(report)
        assert tuple(header) == REPORT_COLUMNS
        assert rows[0][0] == "trace_psd"
        assert rows[0][5] == pytest.approx(rows[0][3] * 1e3)

    def test_config_validation(self):
        """Test invalid simulation settings are rejected"""
        with pytest.raises(ValueError):
            SimConfig(methods=[])
        with pytest.raises(ValueError):
            SimConfig(L=3)
        with pytest.raises(ValueError):
            SimConfig(n_reps=0)


@slow
@pytest.mark.slow
class TestDeskScaleExperiments:
    """Long-running comparisons of the four estimators"""

    def test_table_setting_m5(self):
        """Test n=200, m=5, L=2 over 30 replicates"""
        report = run(SimConfig(n=200, m=5, L=2, n_reps=30, seed=20240101, max_workers=4))
        by_method = {s.method: s for s in report.summaries}
        trace_psd = by_method[PenaltyType.TRACE_PSD]
        assert 3.0e-3 <= trace_psd.aise <= 8.0e-3
        assert 2.0 <= trace_psd.mean_rank <= 5.0

        ise = {(r.replicate, r.method): r.ise for r in report.records if r.success}
        rank = {(r.replicate, r.method): r.rank for r in report.records if r.success}
        reps = range(30)

        def share(better, worse, table):
            pairs = [(table[(i, better)], table[(i, worse)]) for i in reps if (i, better) in table and (i, worse) in table]
            return np.mean([a < b for a, b in pairs])

        assert share(PenaltyType.TRACE_PSD, PenaltyType.TRACE_SYM, ise) > 0.6
        assert share(PenaltyType.HS_PSD, PenaltyType.HS_SYM, ise) > 0.6
        assert share(PenaltyType.TRACE_PSD, PenaltyType.HS_PSD, rank) > 0.8

    def test_table_setting_m20(self):
        """Test n=200, m=20, L=2 over 15 replicates"""
        report = run(SimConfig(n=200, m=20, L=2, n_reps=15, methods=[PenaltyType.TRACE_PSD], max_workers=4))
        summary = report.summaries[0]
        assert 1.0e-3 <= summary.aise <= 4.5e-3
        assert 2.0 <= summary.mean_rank <= 5.0

    def test_error_decreases_with_sample_size(self):
        """Test median ISE at n=200 is below median ISE at n=50"""
        small = run(SimConfig(n=50, m=5, L=2, n_reps=10, methods=[PenaltyType.TRACE_PSD], max_workers=4))
        large = run(SimConfig(n=200, m=5, L=2, n_reps=10, methods=[PenaltyType.TRACE_PSD], max_workers=4))
        median = lambda report: np.median([r.ise for r in report.records if r.success])
        assert median(large) < median(small)
