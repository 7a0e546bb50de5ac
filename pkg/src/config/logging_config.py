"""
Logging configuration for the application
"""
import os
from pathlib import Path

# Base directory for logs (relative to project root unless overridden)
LOGS_BASE_DIR = Path(os.getenv("COVEST_LOG_DIR", str(Path(__file__).parent.parent.parent / "logs")))

# General application log
APP_LOG_FILE = LOGS_BASE_DIR / "covest.log"

# Per-experiment log directory
RUN_LOGS_DIR = LOGS_BASE_DIR / "runs"

# Rotation settings
LOG_MAX_SIZE_MB = int(os.getenv("LOG_MAX_SIZE_MB", "10"))  # Default 10 MB
LOG_BACKUP_COUNT = int(os.getenv("LOG_BACKUP_COUNT", "5"))

# Logging format
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_DATE_FORMAT = '%Y-%m-%d %H:%M:%S'
