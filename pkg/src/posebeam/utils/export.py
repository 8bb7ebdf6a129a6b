import csv
import io
import logging
import math
from pathlib import Path

from .io import atomic_write_json, atomic_write_text

logger = logging.getLogger(__name__)


def _format_value(value) -> str:
    """Floats with 4 decimals, nan as an empty cell, everything else as str."""
    if isinstance(value, float):
        return "" if math.isnan(value) else f"{value:.4f}"
    if value is None:
        return ""
    return str(value)


def export_to_csv(rows: list[dict], columns) -> str:
    """Exports result rows to CSV text; the header is written even without rows."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_value(row.get(column)) for column in columns])
    return buffer.getvalue()


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def save_csv(rows: list[dict], columns, path) -> None:
    atomic_write_text(export_to_csv(rows, columns), str(Path(path)))
    logger.info(f"Wrote {len(rows)} row(s) to {path}")


def save_json(data: dict, path) -> None:
    """JSON with non-finite numbers written as null."""
    atomic_write_json(_json_safe(data), str(Path(path)))
