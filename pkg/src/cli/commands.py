"""
Command handlers: each takes parsed argparse arguments and returns an exit code
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

import config
from models import FitOptions, KernelSpec, PenaltyType, SimConfig
from models.dataset import FunctionalDataset
from services.covariance_service import CovarianceService
from services.eigen_service import EigenService
from services.kernel_service import KernelService
from services.mean_service import MeanService
from services.model_service import ModelService
from services.simulation_service import SimulationService
from utils.exceptions import CovarianceInputError, DegenerateEstimateError
from utils.io_utils import read_long_csv, write_atomic, write_csv

logger = logging.getLogger(__name__)


def parse_cv_grid(text: str) -> np.ndarray:
    """`lo:hi:k` -> k log-spaced values from lo to hi"""
    try:
        lo, hi, k = text.split(":")
        lo, hi, k = float(lo), float(hi), int(k)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi:k, got {text!r}")
    if lo <= 0 or hi <= 0 or k < 1:
        raise argparse.ArgumentTypeError(f"need 0 < lo, 0 < hi and k >= 1, got {text!r}")
    return np.geomspace(lo, hi, k)


def _none_if_nan(value: float) -> Optional[float]:
    return None if not np.isfinite(value) else float(value)


def _read_points(path: str) -> np.ndarray:
    try:
        points = np.loadtxt(path, dtype=float, delimiter=",", ndmin=1, comments="#")
    except (OSError, ValueError) as e:
        raise CovarianceInputError(f"Cannot read points from {path}: {e}") from e
    return np.ravel(points)


def cmd_fit(args: argparse.Namespace) -> int:
    """Fit a covariance model to long-format data and write model.json"""
    spec = KernelSpec()
    records = read_long_csv(args.input)
    data = FunctionalDataset.from_records(records, rescale_time=args.rescale_time)

    mean = MeanService.zero_mean(spec) if args.mean == "zero" else MeanService.fit_mean(data, spec)
    penalty = PenaltyType.from_flags(args.penalty, args.psd)
    opts = FitOptions(penalty=penalty, lam=0.0, max_iter=args.max_iter, rel_tol=args.rel_tol)

    cv_table = []
    if args.lam is not None:
        lam = args.lam
    else:
        lam, cv_table = CovarianceService.cross_validate(
            data, mean, spec, opts, args.cv_grid, folds=args.folds, seed=args.seed
        )

    cache = CovarianceService.build_design(data, mean, spec)
    est = CovarianceService.apg_fit(cache, opts.with_lambda(lam))

    diagnostics = {
        "n_curves": data.n_curves,
        "n_observations": data.n_observations,
        "curves_used": cache.n_curves,
        "dropped_curves": cache.dropped,
        "mean": args.mean,
        "mean_gcv_lambda": mean.gcv_lambda,
        "quad_nodes": args.quad_nodes,
    }
    try:
        system = EigenService.l2_eigen(est, KernelService.make_quadrature(args.quad_nodes))
        diagnostics["l2_eigenvalues"] = system.values.tolist()
        diagnostics["fve"] = system.fve.tolist()
    except DegenerateEstimateError as e:
        logger.warning(f"L2 eigen summary skipped: {e}")

    model = ModelService.to_model_file(est, mean, cv_table, data.rescale, diagnostics)
    ModelService.save(args.output, model)
    print(f"{args.output}: penalty={penalty.value} lambda={lam:.6g} "
          f"rank={model.numerical_rank} q={model.rank_q} iterations={est.iterations}")
    return 0


def cmd_eval_grid(args: argparse.Namespace) -> int:
    """Covariance (and optionally correlation) on a dense grid, one row per (s, t)"""
    model = ModelService.load(args.model)
    est, _ = ModelService.from_model_file(model)
    rescale = model.time_rescale

    if args.points is not None:
        points = _read_points(args.points)
        if rescale is not None:
            points = np.array([rescale.forward(p) for p in points])
    else:
        if args.grid < 1:
            raise CovarianceInputError(f"--grid must be at least 1 (got {args.grid})")
        points = np.linspace(0.0, 1.0, args.grid)
    if np.any(points < 0) or np.any(points > 1):
        raise CovarianceInputError("Evaluation points must lie in the model's time domain")

    C = CovarianceService.evaluate_grid(est, points)
    R = CovarianceService.correlation_grid(est, points) if args.corr else None
    shown = points if rescale is None else np.array([rescale.inverse(p) for p in points])

    header = ["s", "t", "cov"] + (["corr"] if args.corr else [])
    rows = []
    for i, s in enumerate(shown):
        for j, t in enumerate(shown):
            row = [float(s), float(t), float(C[i, j])]
            if R is not None:
                row.append(_none_if_nan(R[i, j]))
            rows.append(row)
    write_csv(args.output, header, rows)

    eigs = np.linalg.eigvalsh(C) if C.size else np.zeros(1)
    psd = eigs.min() >= -1e-10 * max(abs(eigs).max(), 1e-300)
    print(f"grid {points.size}x{points.size}: min eigenvalue {eigs.min():.3e}, "
          f"max eigenvalue {eigs.max():.3e}, PSD={'yes' if psd else 'no'}", file=sys.stderr)
    return 0


def cmd_eigen(args: argparse.Namespace) -> int:
    """Eigenvalues and eigenfunctions on a grid (CSV) and cumulative FVE (JSON)"""
    model = ModelService.load(args.model)
    est, _ = ModelService.from_model_file(model)
    rule = KernelService.make_quadrature(args.quad_nodes)
    system = EigenService.l2_eigen(est, rule)

    if args.k is not None:
        if args.k < 1 or args.k > system.n_components:
            raise CovarianceInputError(f"--k must lie in 1..{system.n_components} (got {args.k})")
        k = args.k
    else:
        k = EigenService.truncate_by_fve(system, args.fve)

    grid = np.linspace(0.0, 1.0, args.grid)
    Phi = EigenService.eval_eigenfunctions(est, system, grid)
    shown = grid if model.time_rescale is None else np.array([model.time_rescale.inverse(u) for u in grid])
    rows = [
        [j + 1, float(system.values[j]), float(t), float(Phi[i, j])]
        for j in range(k) for i, t in enumerate(shown)
    ]
    write_csv(args.output, ["component", "eigenvalue", "t", "phi"], rows)

    summary = {
        "k": k,
        "eigenvalues": system.values.tolist(),
        "fve": system.fve.tolist(),
        "fve_threshold": None if args.k is not None else args.fve,
        "numerical_rank": model.numerical_rank,
        "nonzero_eigenvalues": system.n_components,
    }
    fve_path = args.fve_output or str(Path(args.output).with_suffix(".fve.json"))
    write_atomic(fve_path, json.dumps(summary, indent=2))
    print(f"{k} component(s) written; cumulative FVE {system.fve[k - 1]:.4f}" if k else "no components")
    return 0


def cmd_scores(args: argparse.Namespace) -> int:
    """FPC scores of each curve in the input file"""
    model = ModelService.load(args.model)
    est, mean = ModelService.from_model_file(model)
    mean = mean or MeanService.zero_mean(est.spec)

    records = read_long_csv(args.input)
    data = FunctionalDataset.from_records(records, rescale=model.time_rescale)
    rule = KernelService.make_quadrature(args.quad_nodes)
    system = EigenService.l2_eigen(est, rule)
    scores = EigenService.fpc_scores(data, mean, system, est, args.k, rule)

    header = ["curve_id"] + [f"score_{j + 1}" for j in range(args.k)]
    rows = [[cid] + [_none_if_nan(v) for v in scores[i]] for i, cid in enumerate(data.curve_ids)]
    write_csv(args.output, header, rows)
    return 0


def _simulation_config(args: argparse.Namespace) -> SimConfig:
    settings = {}
    if args.config is not None:
        try:
            settings = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise CovarianceInputError(f"Cannot read simulation config {args.config}: {e}") from e
        if not isinstance(settings, dict):
            raise CovarianceInputError(f"{args.config}: expected a JSON object")
    else:
        settings["max_workers"] = config.MAX_WORKERS

    overrides = {
        "n": args.n, "m": args.m, "L": args.L, "n_reps": args.reps, "seed": args.seed,
        "noise_var": args.noise_var, "max_workers": args.workers, "folds": args.folds,
    }
    settings.update({key: value for key, value in overrides.items() if value is not None})
    if args.methods:
        settings["methods"] = args.methods
    if args.true_mean_zero:
        settings["use_true_mean_zero"] = True
    return SimConfig.model_validate(settings)


def cmd_simulate(args: argparse.Namespace) -> int:
    """Run the estimator comparison and write report.csv and report.json"""
    cfg = _simulation_config(args)
    report = SimulationService.run_experiment(cfg)

    out_dir = Path(args.out_dir)
    header, rows = SimulationService.report_table(report)
    write_csv(out_dir / "report.csv", header, rows)
    write_atomic(out_dir / "report.json", report.model_dump_json(indent=2))

    for s in report.summaries:
        aise = "n/a" if s.aise is None else f"{s.aise * 1e3:.3f}e-3"
        print(f"{s.method.value:10s} AISE={aise} success={s.success_rate:.2f} mean rank={s.mean_rank}")
    return 0


def available_methods() -> List[str]:
    return [p.value for p in PenaltyType]
