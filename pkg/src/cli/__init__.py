"""
Command-line interface: fit, eval-grid, eigen, scores, simulate
"""
import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

import config
from cli.commands import (
    available_methods,
    cmd_eigen,
    cmd_eval_grid,
    cmd_fit,
    cmd_scores,
    cmd_simulate,
    parse_cv_grid,
)
from utils.exceptions import CovarianceError

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covest",
        description="Sparse functional covariance estimation with spectral penalties in a Sobolev RKHS.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="Fit a covariance model to curve_id,t,y data")
    fit.add_argument("input", help="Long-format CSV with header curve_id,t,y")
    fit.add_argument("-o", "--output", default="model.json", help="Model file to write (default: model.json)")
    fit.add_argument("--penalty", choices=["trace", "hs"], default="trace", help="Spectral penalty (default: trace)")
    fit.add_argument("--psd", action=argparse.BooleanOptionalAction, default=True,
                     help="Constrain the estimate to be positive semidefinite (default: on)")
    choice = fit.add_mutually_exclusive_group()
    choice.add_argument("--lambda", dest="lam", type=float, default=None, help="Fixed regularization parameter")
    choice.add_argument("--cv-grid", type=parse_cv_grid, default=None,
                        help="Cross-validation grid lo:hi:k, log-spaced (default: 1e-9:1e-1:30)")
    fit.add_argument("--folds", type=int, default=config.CV_FOLDS, help="Cross-validation folds")
    fit.add_argument("--seed", type=int, default=config.DEFAULT_SEED, help="Seed for the fold shuffle")
    fit.add_argument("--rescale-time", action="store_true", help="Min-max map observation times onto [0, 1]")
    fit.add_argument("--mean", choices=["gcv", "zero"], default="gcv",
                     help="Smoothing-spline mean chosen by GCV, or a known zero mean")
    fit.add_argument("--quad-nodes", type=int, default=config.QUAD_NODES, help="Gauss-Legendre nodes for L2 summaries")
    fit.add_argument("--max-iter", type=int, default=config.MAX_ITER, help="Maximum optimizer iterations")
    fit.add_argument("--rel-tol", type=float, default=config.REL_TOL, help="Optimality residual tolerance that stops the optimizer")
    fit.set_defaults(handler=cmd_fit)

    grid = sub.add_parser("eval-grid", help="Evaluate covariance (and correlation) on a grid")
    grid.add_argument("model", help="Model file written by fit")
    grid.add_argument("-o", "--output", default="grid.csv", help="CSV to write (default: grid.csv)")
    where = grid.add_mutually_exclusive_group()
    where.add_argument("--grid", type=int, default=50, help="Equally spaced points on the domain (default: 50)")
    where.add_argument("--points", default=None, help="File of evaluation points, one per line")
    grid.add_argument("--corr", action="store_true", help="Add a correlation column")
    grid.set_defaults(handler=cmd_eval_grid)

    eigen = sub.add_parser("eigen", help="L2 eigenvalues, eigenfunctions and FVE")
    eigen.add_argument("model", help="Model file written by fit")
    eigen.add_argument("-o", "--output", default="eigen.csv", help="CSV of eigenfunction values (default: eigen.csv)")
    eigen.add_argument("--fve-output", default=None, help="FVE JSON (default: <output>.fve.json)")
    eigen.add_argument("--k", type=int, default=None, help="Number of components")
    eigen.add_argument("--fve", type=float, default=0.99, help="Cumulative FVE that picks k when --k is omitted")
    eigen.add_argument("--grid", type=int, default=101, help="Grid points for eigenfunction values")
    eigen.add_argument("--quad-nodes", type=int, default=config.QUAD_NODES, help="Gauss-Legendre nodes")
    eigen.set_defaults(handler=cmd_eigen)

    scores = sub.add_parser("scores", help="FPC scores of each curve")
    scores.add_argument("model", help="Model file written by fit")
    scores.add_argument("input", help="Long-format CSV with header curve_id,t,y")
    scores.add_argument("-o", "--output", default="scores.csv", help="CSV to write (default: scores.csv)")
    scores.add_argument("--k", type=int, default=2, help="Number of components (default: 2)")
    scores.add_argument("--quad-nodes", type=int, default=config.QUAD_NODES, help="Gauss-Legendre nodes")
    scores.set_defaults(handler=cmd_scores)

    sim = sub.add_parser("simulate", help="Compare estimators on simulated data")
    sim.add_argument("--config", default=None, help="JSON simulation settings; flags override its entries")
    sim.add_argument("--n", type=int, default=None, help="Curves per dataset")
    sim.add_argument("--m", type=int, default=None, help="Observations per curve")
    sim.add_argument("--L", type=int, choices=[2, 4], default=None, help="True covariance rank")
    sim.add_argument("--reps", type=int, default=None, help="Replicates")
    sim.add_argument("--seed", type=int, default=None, help="Master seed")
    sim.add_argument("--methods", nargs="+", choices=available_methods(), default=None, help="Estimators to compare")
    sim.add_argument("--noise-var", type=float, default=None, help="Measurement error variance")
    sim.add_argument("--folds", type=int, default=None, help="Cross-validation folds")
    sim.add_argument("--true-mean-zero", action="store_true", help="Center with the known mean instead of smoothing")
    sim.add_argument("--workers", type=int, default=None, help="Replicates fitted concurrently")
    sim.add_argument("--out-dir", default="results", help="Directory for report.csv and report.json")
    sim.set_defaults(handler=cmd_simulate)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments and dispatch; 0 on success, 1 on failure, 2 on usage errors"""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (CovarianceError, ValidationError, ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
