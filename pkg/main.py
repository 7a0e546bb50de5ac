"""
Command-line entry point for covariance estimation
"""
import sys
import logging
from pathlib import Path
from logging.handlers import RotatingFileHandler

# Add src directory to Python path
src_path = Path(__file__).parent / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from config import LOG_LEVEL  # noqa: E402
from config.logging_config import (  # noqa: E402
    APP_LOG_FILE,
    LOG_BACKUP_COUNT,
    LOG_DATE_FORMAT,
    LOG_FORMAT,
    LOG_MAX_SIZE_MB,
)


def configure_logging() -> None:
    """Root logger: rotating file plus console on stderr (stdout carries command output)"""
    APP_LOG_FILE.parent.mkdir(parents=True, exist_ok=True)
    formatter = logging.Formatter(LOG_FORMAT, datefmt=LOG_DATE_FORMAT)
    level = getattr(logging, LOG_LEVEL, logging.INFO)

    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # Remove existing handlers to avoid duplicates
    root_logger.handlers.clear()

    file_handler = RotatingFileHandler(
        APP_LOG_FILE,
        maxBytes=LOG_MAX_SIZE_MB * 1024 * 1024,
        backupCount=LOG_BACKUP_COUNT,
        encoding='utf-8'
    )
    file_handler.setLevel(level)
    file_handler.setFormatter(formatter)
    root_logger.addHandler(file_handler)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(logging.WARNING if level < logging.WARNING else level)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)


if __name__ == "__main__":
    configure_logging()
    logger = logging.getLogger("covest")
    logger.info(f"covest {' '.join(sys.argv[1:])}")

    from cli import main

    sys.exit(main())
