"""
Configuration module for loading environment variables
"""
import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Gauss-Legendre nodes used wherever an integral over [0, 1] appears
QUAD_NODES = int(os.getenv("COVEST_QUAD_NODES", "128"))

# Relative eigenvalue cutoff for the Gram factor rank q (and the R pseudo-inverse)
RANK_TOL = float(os.getenv("COVEST_RANK_TOL", "1e-10"))

# APG stopping rule
MAX_ITER = int(os.getenv("COVEST_MAX_ITER", "5000"))
REL_TOL = float(os.getenv("COVEST_REL_TOL", "1e-8"))

# Cross-validation folds (curve-level)
CV_FOLDS = int(os.getenv("COVEST_CV_FOLDS", "5"))

# Worker threads for simulation replicates (clamped to 1..64)
MAX_WORKERS = max(1, min(64, int(os.getenv("COVEST_MAX_WORKERS", "4"))))

# Default seed for CLI commands that shuffle or simulate
DEFAULT_SEED = int(os.getenv("COVEST_SEED", "20240101"))

LOG_LEVEL = os.getenv("COVEST_LOG_LEVEL", "INFO").upper()
