"""
File IO helpers: atomic writes and long-format CSV ingestion
"""
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from models import LongRecord
from utils.exceptions import CovarianceInputError

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("curve_id", "t", "y")
MAX_LISTED_LINES = 50


def write_atomic(path: Union[str, Path], text: str) -> Path:
    """
    Write text to `path` via a temp file in the same directory and os.replace.

    Returns:
        The final path
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except Exception:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.info(f"Wrote {target}")
    return target


def _format_cell(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def rows_to_frame(header: Sequence[str], rows: Iterable[Sequence[object]]) -> pd.DataFrame:
    """Rows as a string-valued DataFrame: floats in shortest round-trip form, None as an empty field."""
    return pd.DataFrame([[_format_cell(value) for value in row] for row in rows], columns=list(header))


def rows_to_csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    """Render rows as CSV text; None becomes an empty field."""
    return rows_to_frame(header, rows).to_csv(index=False, lineterminator="\n")


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    """rows_to_csv written atomically"""
    return write_atomic(path, rows_to_csv(header, rows))


def read_long_csv(path: Union[str, Path]) -> List[LongRecord]:
    """
    Read a `curve_id,t,y` CSV file.

    Raises:
        CovarianceInputError: Unreadable file, missing columns or malformed rows
            (offending line numbers are listed)
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame()
    except pd.errors.ParserError as e:
        raise CovarianceInputError(f"{path}: unreadable CSV ({str(e).strip()})")

    if any(col not in frame.columns for col in REQUIRED_COLUMNS):
        raise CovarianceInputError(
            f"{path}: header must contain columns {','.join(REQUIRED_COLUMNS)} (got {list(frame.columns)})"
        )
    if frame.empty:
        raise CovarianceInputError(f"{path}: no data rows")

    t = pd.to_numeric(frame["t"], errors="coerce").to_numpy(dtype=float)
    y = pd.to_numeric(frame["y"], errors="coerce").to_numpy(dtype=float)
    ids = frame["curve_id"].to_numpy(dtype=str)
    bad = ~np.isfinite(t) | ~np.isfinite(y) | (ids == "")

    records: List[LongRecord] = []
    for pos in np.flatnonzero(~bad):
        try:
            records.append(LongRecord(curve_id=str(ids[pos]), t=float(t[pos]), y=float(y[pos])))
        except ValidationError:
            bad[pos] = True

    if bad.any():
        # header is line 1
        lines = np.flatnonzero(bad) + 2
        listed = ", ".join(str(line) for line in lines[:MAX_LISTED_LINES])
        raise CovarianceInputError(f"{path}: {lines.size} malformed row(s) at line(s) {listed}")

    logger.info(f"Read {len(records)} observations from {path}")
    return records
