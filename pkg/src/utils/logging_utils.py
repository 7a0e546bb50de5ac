"""
Logging utilities for per-experiment logging and option summaries
"""
import logging
from typing import Any, Dict
from config.logging_config import RUN_LOGS_DIR, LOG_FORMAT


def setup_run_logger(run_id: str) -> logging.Logger:
    """
    Sets up a logger for a specific simulation run.
    Logs are stored in logs/runs/{run_id}.log
    """
    RUN_LOGS_DIR.mkdir(parents=True, exist_ok=True)
    log_file_path = RUN_LOGS_DIR / f"{run_id}.log"

    logger = logging.getLogger(f"run_logger_{run_id}")
    logger.setLevel(logging.INFO)
    logger.propagate = False  # Keep replicate chatter out of the main log

    # Check if handler already exists to prevent duplicate logs
    if not any(isinstance(handler, logging.FileHandler) and handler.baseFilename == str(log_file_path.resolve()) for handler in logger.handlers):
        file_handler = logging.FileHandler(log_file_path)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(file_handler)

    return logger


def close_run_logger(run_logger: logging.Logger) -> None:
    """Flush, close and detach the file handlers added by setup_run_logger"""
    for handler in list(run_logger.handlers):
        if isinstance(handler, logging.FileHandler):
            run_logger.removeHandler(handler)
            handler.close()


def summarize_options(data: Dict[str, Any], digits: int = 4) -> str:
    """
    Renders an options dictionary as a compact `key=value` string for log lines.
    Floats are shown with `digits` significant digits, nested dicts recursively.
    """
    parts = []
    for key, value in data.items():
        if isinstance(value, dict):
            parts.append(f"{key}=({summarize_options(value, digits)})")
        elif isinstance(value, float):
            parts.append(f"{key}={value:.{digits}g}")
        elif isinstance(value, (list, tuple)) and len(value) > 6:
            parts.append(f"{key}=[{len(value)} items]")
        else:
            parts.append(f"{key}={value}")
    return ", ".join(parts)
