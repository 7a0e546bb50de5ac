"""
Unit tests for CovarianceService
"""
import os
import pytest
import sys
from pathlib import Path

import numpy as np

# Add src to path for testing
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from models import FitOptions, KernelSpec, PenaltyType, SimConfig
from models.dataset import FunctionalDataset
from penalties import get_penalty
from services.covariance_service import CovarianceService
from services.mean_service import MeanService
from services.simulation_service import SimulationService
from services.spectral_service import SpectralService
from utils.exceptions import CovarianceInputError, DegenerateVarianceError

SPEC = KernelSpec()

RUN_SLOW = os.getenv("COVEST_RUN_SLOW") == "1"
slow = pytest.mark.skipif(not RUN_SLOW, reason="set COVEST_RUN_SLOW=1 to run desk-scale experiments")


def make_data(n: int, m: int, seed: int, noise: float = 0.05) -> FunctionalDataset:
    """Centered curves with a rank-2 covariance, m noisy points each"""
    rng = np.random.default_rng(seed)
    times, values = [], []
    for _ in range(n):
        t = rng.uniform(size=m)
        xi = rng.normal(size=2) * np.array([0.5, 1.0 / 3.0])
        x = xi[0] * np.sqrt(2) * np.cos(2 * np.pi * t) + xi[1] * np.sqrt(2) * np.sin(2 * np.pi * t)
        times.append(t)
        values.append(x + noise * rng.normal(size=m))
    return FunctionalDataset.from_arrays(times, values)


def design(n: int = 4, m: int = 3, seed: int = 0):
    return CovarianceService.build_design(make_data(n, m, seed), MeanService.zero_mean(), SPEC)


def random_symmetric(rng: np.random.Generator, q: int) -> np.ndarray:
    A = rng.normal(size=(q, q))
    return 0.5 * (A + A.T)


def loss_hessian(cache) -> np.ndarray:
    """Hessian of the quadratic loss in svec coordinates"""
    q = cache.q
    dim = q * (q + 1) // 2
    _, g0 = CovarianceService.loss_and_grad(cache, np.zeros((q, q)))
    H = np.empty((dim, dim))
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = 1.0
        _, g = CovarianceService.loss_and_grad(cache, SpectralService.svec_inv(e))
        H[:, k] = SpectralService.svec(g - g0)
    return 0.5 * (H + H.T)


def reference_fista(cache, penalty_type: PenaltyType, lam: float, n_iter: int) -> float:
    """Fixed-step FISTA with the exact Lipschitz constant; returns the best objective"""
    penalty = get_penalty(penalty_type)
    L = float(np.linalg.eigvalsh(loss_hessian(cache)).max())
    q = cache.q
    x = np.zeros((q, q))
    y, t = x.copy(), 1.0
    best = CovarianceService.objective(cache, x, penalty, lam)
    for _ in range(n_iter):
        _, g = CovarianceService.loss_and_grad(cache, y)
        x_next = penalty.prox(y - g / L, lam / L)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_next + ((t - 1.0) / t_next) * (x_next - x)
        x, t = x_next, t_next
        best = min(best, CovarianceService.objective(cache, x, penalty, lam))
    return best


class TestDesign:
    """Test cases for building the finite-dimensional problem"""

    def test_zero_mean_uses_raw_products(self):
        """Test μ̂ = 0 gives Z_ijk = Y_ij Y_ik"""
        data = make_data(5, 4, seed=1)
        cache = CovarianceService.build_design(data, MeanService.zero_mean(), SPEC)
        for Z, y in zip(cache.Z_blocks, data.values):
            np.testing.assert_array_equal(Z, np.outer(y, y))

    def test_short_curves_dropped(self):
        """Test curves with a single observation are excluded"""
        data = make_data(5, 3, seed=2)
        short = FunctionalDataset.from_arrays(
            list(data.times) + [np.array([0.5])], list(data.values) + [np.array([1.0])]
        )
        cache = CovarianceService.build_design(short, None, SPEC)
        assert cache.n_curves == 5
        assert cache.dropped == 1
        assert cache.normalizer == pytest.approx(1.0 / (5 * 3 * 2))

    def test_all_curves_too_short(self):
        """Test the loss is undefined without any pair"""
        data = FunctionalDataset.from_arrays([[0.2], [0.7]], [[1.0], [2.0]])
        with pytest.raises(CovarianceInputError, match="m\\(m-1\\)=0"):
            CovarianceService.build_design(data, None, SPEC)


class TestLossAndGradient:
    """Test cases for the empirical loss"""

    def test_gradient_matches_finite_differences(self):
        """Test directional derivatives against central differences on 20 instances"""
        for seed in range(20):
            cache = design(n=4, m=3, seed=seed)
            rng = np.random.default_rng(100 + seed)
            B = random_symmetric(rng, cache.q) * 0.1
            D = random_symmetric(rng, cache.q)
            _, G = CovarianceService.loss_and_grad(cache, B)
            h = 1e-5
            f_plus, _ = CovarianceService.loss_and_grad(cache, B + h * D)
            f_minus, _ = CovarianceService.loss_and_grad(cache, B - h * D)
            numeric = (f_plus - f_minus) / (2 * h)
            analytic = float(np.sum(G * D))
            assert abs(numeric - analytic) <= 1e-6 * max(1.0, abs(analytic))

    def test_hessian_identity(self):
        """Test ⟨Δ, ∇ℓ(Δ) - ∇ℓ(0)⟩ = 2c Σ‖ρ(M_i Δ M_iᵀ)‖²"""
        cache = design(n=6, m=4, seed=3)
        rng = np.random.default_rng(4)
        zero = np.zeros((cache.q, cache.q))
        _, g0 = CovarianceService.loss_and_grad(cache, zero)
        for _ in range(5):
            delta = random_symmetric(rng, cache.q)
            _, g = CovarianceService.loss_and_grad(cache, delta)
            lhs = float(np.sum(delta * (g - g0)))
            rhs = 0.0
            for Mi in cache.curve_blocks:
                P = Mi @ delta @ Mi.T
                np.fill_diagonal(P, 0.0)
                rhs += float(np.sum(P * P))
            rhs *= 2.0 * cache.normalizer
            assert lhs == pytest.approx(rhs, rel=1e-9)

    def test_gradient_is_symmetric(self):
        """Test ∇ℓ is a symmetric matrix"""
        cache = design()
        _, G = CovarianceService.loss_and_grad(cache, random_symmetric(np.random.default_rng(5), cache.q))
        np.testing.assert_allclose(G, G.T, atol=1e-14)

    def test_wrong_shape(self):
        """Test B must be q x q"""
        cache = design()
        with pytest.raises(CovarianceInputError, match="B must be"):
            CovarianceService.loss_and_grad(cache, np.zeros((cache.q + 1, cache.q + 1)))


class TestApgFit:
    """Test cases for the accelerated proximal gradient fitter"""

    def test_first_step_theta_is_one(self):
        """Test θ₀ = 1 (θ₋₁ = ∞)"""
        est = CovarianceService.apg_fit(design(), FitOptions(lam=1e-2, max_iter=5))
        assert est.theta_trace[0] == 1.0
        assert all(0 < theta <= 1 for theta in est.theta_trace)

    @pytest.mark.parametrize("penalty_type,lam", [
        (PenaltyType.TRACE_PSD, 0.05),
        (PenaltyType.TRACE_SYM, 0.05),
        (PenaltyType.HS_PSD, 0.05),
        (PenaltyType.HS_SYM, 0.05),
    ])
    def test_matches_reference_solver(self, penalty_type, lam):
        """Test the final objective against a long fixed-step reference run"""
        for seed in (0, 1):
            cache = design(n=4, m=3, seed=seed)
            opts = FitOptions(penalty=penalty_type, lam=lam, max_iter=20000, rel_tol=1e-15)
            est = CovarianceService.apg_fit(cache, opts)
            reference = reference_fista(cache, penalty_type, lam, 20000)
            assert est.objective == pytest.approx(reference, abs=1e-6 * max(1.0, abs(reference)))

    def test_default_options_reach_reference(self):
        """Test default FitOptions land within 1e-6 of the reference on 10 tiny instances"""
        for seed in range(10):
            cache = design(n=4, m=3, seed=seed)
            est = CovarianceService.apg_fit(cache, FitOptions(penalty=PenaltyType.TRACE_PSD, lam=1e-4))
            reference = reference_fista(cache, PenaltyType.TRACE_PSD, 1e-4, 20000)
            assert est.objective <= reference + 1e-6 * max(1.0, abs(reference)), f"seed {seed}"

    def test_converged_flag_is_honest(self):
        """Test a run cut off by max_iter is not reported as converged"""
        cache = design(n=6, m=4, seed=3)
        short = CovarianceService.apg_fit(cache, FitOptions(lam=1e-4, max_iter=3))
        assert short.iterations == 3
        assert not short.converged

    def test_unpenalized_hs_matches_normal_equations(self):
        """Test λ = 0 with the unconstrained HS penalty solves the least-squares normal equations"""
        data = make_data(30, 4, seed=21)
        cache = CovarianceService.build_design(data, None, SPEC, rel_tol=5e-2)
        H = loss_hessian(cache)
        assert np.linalg.matrix_rank(H) == H.shape[0]
        f0, g0 = CovarianceService.loss_and_grad(cache, np.zeros((cache.q, cache.q)))
        b_star = -np.linalg.solve(H, SpectralService.svec(g0))
        exact = f0 + 0.5 * float(SpectralService.svec(g0) @ b_star)

        est = CovarianceService.apg_fit(cache, FitOptions(penalty=PenaltyType.HS_SYM, lam=0.0))
        assert est.objective == pytest.approx(exact, abs=1e-7 * max(1.0, abs(exact)))

    def test_symmetric_trace_fits_training_data_better(self):
        """Test TraceSym reaches a loss no larger than TracePSD at the same λ"""
        for seed in (0, 1):
            cache = design(n=6, m=4, seed=seed)
            psd = CovarianceService.apg_fit(cache, FitOptions(penalty=PenaltyType.TRACE_PSD, lam=1e-3))
            sym = CovarianceService.apg_fit(cache, FitOptions(penalty=PenaltyType.TRACE_SYM, lam=1e-3))
            assert sym.objective <= psd.objective + 1e-9
            loss_psd, _ = CovarianceService.loss_and_grad(cache, psd.B)
            loss_sym, _ = CovarianceService.loss_and_grad(cache, sym.B)
            assert loss_sym <= loss_psd + 1e-9

    def test_psd_variants_stay_psd(self):
        """Test constrained fits have no negative eigenvalues"""
        cache = design(n=8, m=4, seed=6)
        for penalty_type in (PenaltyType.TRACE_PSD, PenaltyType.HS_PSD):
            est = CovarianceService.apg_fit(cache, FitOptions(penalty=penalty_type, lam=1e-3))
            assert np.linalg.eigvalsh(est.B).min() >= -1e-10

    def test_lambda_max_zeroes_trace_fit(self):
        """Test λ above the spectral radius of ∇ℓ(0) gives B = 0"""
        cache = design(n=8, m=4, seed=7)
        lam = 1.01 * CovarianceService.lambda_max(cache)
        for penalty_type in (PenaltyType.TRACE_PSD, PenaltyType.TRACE_SYM):
            est = CovarianceService.apg_fit(cache, FitOptions(penalty=penalty_type, lam=lam))
            np.testing.assert_array_equal(est.B, np.zeros_like(est.B))

    def test_returns_best_iterate(self):
        """Test the reported objective is the minimum of the trace"""
        est = CovarianceService.apg_fit(design(n=6, m=4, seed=8), FitOptions(lam=1e-3, max_iter=200))
        assert est.objective == pytest.approx(min(est.objective_trace + [est.objective]))
        assert est.iterations <= 200

    def test_warm_start_shape_checked(self):
        """Test B0 of the wrong size is rejected"""
        with pytest.raises(CovarianceInputError, match="B0"):
            CovarianceService.apg_fit(design(), FitOptions(lam=1e-2, B0=np.eye(1)))

    def test_fit_option_validation(self):
        """Test eta and alpha ranges are enforced"""
        with pytest.raises(ValueError):
            FitOptions(lam=1e-2, eta=1.0)
        with pytest.raises(ValueError):
            FitOptions(lam=1e-2, alpha=1.0)
        with pytest.raises(ValueError):
            FitOptions(lam=-1.0)

    def test_curve_order_invariance(self):
        """Test permuting curves leaves the estimate unchanged"""
        data = make_data(8, 4, seed=9)
        perm = np.random.default_rng(10).permutation(data.n_curves)
        opts = FitOptions(penalty=PenaltyType.HS_SYM, lam=1e-2, max_iter=20000, rel_tol=1e-14)
        est_a = CovarianceService.fit_covariance(data, None, SPEC, opts)
        est_b = CovarianceService.fit_covariance(data.subset(list(perm)), None, SPEC, opts)
        grid = np.linspace(0, 1, 15)
        np.testing.assert_allclose(
            CovarianceService.evaluate_grid(est_a, grid), CovarianceService.evaluate_grid(est_b, grid), atol=1e-6
        )


class TestCrossValidation:
    """Test cases for curve-level cross-validation"""

    def test_folds_partition_curves(self):
        """Test every usable curve is held out exactly once"""
        data = make_data(12, 3, seed=11)
        plan = CovarianceService.build_folds(data, None, SPEC, folds=3, seed=1)
        held = sorted(cid for fold in plan for cid in fold.validation.curve_ids)
        assert held == sorted(data.curve_ids)
        for fold in plan:
            assert not set(fold.train.curve_ids) & set(fold.validation.curve_ids)

    def test_folds_reproducible(self):
        """Test the same seed gives the same partition"""
        data = make_data(12, 3, seed=12)
        a = CovarianceService.build_folds(data, None, SPEC, folds=4, seed=5)
        b = CovarianceService.build_folds(data, None, SPEC, folds=4, seed=5)
        assert [f.validation.curve_ids for f in a] == [f.validation.curve_ids for f in b]

    def test_too_few_folds(self):
        """Test at least 2 folds are required"""
        with pytest.raises(CovarianceInputError, match="at least 2 folds"):
            CovarianceService.build_folds(make_data(6, 3, seed=0), None, SPEC, folds=1)

    def test_best_lambda_from_grid(self):
        """Test the chosen λ is a grid value and the table covers every (fold, λ)"""
        data = make_data(20, 4, seed=13)
        grid = [1e-4, 1e-3, 1e-2]
        lam, table = CovarianceService.cross_validate(
            data, None, SPEC, FitOptions(lam=0.0), grid, folds=3, seed=2
        )
        assert lam in grid
        assert len(table) == 3 * len(grid)
        assert all(row.loss is not None and row.loss >= 0 for row in table)

    def test_ties_go_to_larger_lambda(self):
        """Test equal validation losses choose the largest λ"""
        data = make_data(12, 3, seed=14)
        plan = CovarianceService.build_folds(data, None, SPEC, folds=3, seed=0)
        huge = 10.0 * max(CovarianceService.lambda_max(fold.train) for fold in plan)
        grid = [huge, 2 * huge, 4 * huge]
        lam, _ = CovarianceService.cross_validate(data, None, SPEC, FitOptions(lam=0.0), grid, plan=plan)
        assert lam == 4 * huge

    def test_shared_plan_matches_fresh_plan(self):
        """Test passing a prebuilt plan gives the same answer as building it"""
        data = make_data(15, 3, seed=15)
        grid = [1e-3, 1e-2]
        plan = CovarianceService.build_folds(data, None, SPEC, folds=3, seed=4)
        a, _ = CovarianceService.cross_validate(data, None, SPEC, FitOptions(lam=0.0), grid, folds=3, seed=4)
        b, _ = CovarianceService.cross_validate(data, None, SPEC, FitOptions(lam=0.0), grid, plan=plan)
        assert a == b

    def test_default_grid_used_when_none_given(self):
        """Test a missing grid falls back to the 30-value default"""
        data = make_data(10, 3, seed=17)
        lam, table = CovarianceService.cross_validate(data, None, SPEC, FitOptions(lam=0.0), folds=2, seed=3)
        grid = CovarianceService.default_lambda_grid()
        assert grid.size == 30 and grid[0] == pytest.approx(1e-9) and grid[-1] == pytest.approx(1e-1)
        assert lam in grid
        assert sorted({row.lam for row in table}) == sorted(grid.tolist())

    @slow
    @pytest.mark.slow
    def test_best_lambda_interior_on_simulated_data(self):
        """Test the CV choice is not an endpoint of the default grid in at least 16 of 20 replicates"""
        grid = CovarianceService.default_lambda_grid()
        interior = 0
        for seed in range(20):
            data, _ = SimulationService.generate_dataset(SimConfig(n=50, m=5, L=2, seed=seed), 0)
            mean = MeanService.fit_mean(data, SPEC)
            lam, _ = CovarianceService.cross_validate(data, mean, SPEC, FitOptions(lam=0.0), folds=5, seed=seed)
            interior += grid.min() < lam < grid.max()
        assert interior >= 16


class TestEvaluation:
    """Test cases for covariance and correlation evaluation"""

    def setup_method(self):
        self.data = make_data(15, 4, seed=16)
        self.est = CovarianceService.fit_covariance(self.data, None, SPEC, FitOptions(lam=1e-3))

    def test_symmetric(self):
        """Test Ĉ(s, t) = Ĉ(t, s)"""
        assert CovarianceService.evaluate(self.est, 0.2, 0.7) == pytest.approx(
            CovarianceService.evaluate(self.est, 0.7, 0.2), abs=1e-14
        )

    def test_grid_matches_pointwise(self):
        """Test evaluate_grid agrees with evaluate"""
        s, t = [0.1, 0.5], [0.3, 0.9, 1.0]
        C = CovarianceService.evaluate_grid(self.est, s, t)
        assert C.shape == (2, 3)
        assert C[1, 2] == pytest.approx(CovarianceService.evaluate(self.est, 0.5, 1.0), abs=1e-13)

    def test_at_anchors_equals_mbm(self):
        """Test Ĉ at the anchors is M B Mᵀ"""
        anchors = self.est.anchor_points
        C = CovarianceService.evaluate_grid(self.est, anchors)
        M = self.est.factor.M
        np.testing.assert_allclose(C, M @ self.est.B @ M.T, atol=1e-8)

    def test_correlation_diagonal_is_one(self):
        """Test corr(t, t) = 1 where the variance is positive"""
        assert CovarianceService.correlation(self.est, 0.4, 0.4) == 1.0
        R = CovarianceService.correlation_grid(self.est, np.linspace(0, 1, 7))
        np.testing.assert_allclose(np.diag(R), np.ones(7))
        assert np.all(np.abs(R) <= 1 + 1e-8)

    def test_correlation_of_zero_model(self):
        """Test a zero estimate has no defined correlation"""
        cache = CovarianceService.build_design(self.data, None, SPEC)
        zero = CovarianceService.apg_fit(cache, FitOptions(lam=1e6))
        with pytest.raises(DegenerateVarianceError, match="below floor"):
            CovarianceService.correlation(zero, 0.3, 0.6)
        assert np.all(np.isnan(CovarianceService.correlation_grid(zero, [0.2, 0.8])))
