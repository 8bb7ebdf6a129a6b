import json
import logging
import os
import tempfile
from pathlib import Path

# Initialize logger for this module
logger = logging.getLogger(__name__)


def _atomic_write(file_path_str: str, write, *, binary: bool) -> None:
    path_obj = Path(file_path_str)
    path_obj.parent.mkdir(parents=True, exist_ok=True)
    temp_file_path = None
    try:
        # Same directory as the target so os.replace stays on one filesystem.
        with tempfile.NamedTemporaryFile(
            mode='wb' if binary else 'w',
            encoding=None if binary else 'utf-8',
            newline=None if binary else '',
            dir=path_obj.parent,
            prefix=path_obj.name + '.',
            suffix='.tmp',
            delete=False
        ) as tmp_file:
            temp_file_path = tmp_file.name
            write(tmp_file)
            tmp_file.flush()
            os.fsync(tmp_file.fileno())
        os.replace(temp_file_path, path_obj)
    except Exception as e:
        logger.error(f"Error writing {file_path_str}: {e}", exc_info=True)
        if temp_file_path is not None and Path(temp_file_path).exists():
            try:
                os.remove(temp_file_path)
            except OSError as remove_err:
                logger.error(f"Error removing temporary file {temp_file_path}: {remove_err}", exc_info=True)
        raise


def atomic_write_json(data: dict, file_path_str: str) -> None:
    """
    Atomically writes a dictionary to a JSON file.

    It first writes to a temporary file in the same directory, then renames it
    to the final destination, ensuring that the destination file is either
    the old version or the new version, never a partially written one. Keys
    are written in insertion order so equal inputs give byte-identical files.

    Args:
        data: The dictionary to write to JSON.
        file_path_str: The path to the target JSON file.

    Raises:
        OSError: If file operations fail (e.g., permission issues).
        TypeError: If the data is not JSON serializable.
        ValueError: If JSON encoding fails for other reasons.
    """
    _atomic_write(file_path_str, lambda f: json.dump(data, f, indent=4, ensure_ascii=False), binary=False)
    logger.debug(f"Wrote JSON data to {file_path_str}")


def atomic_write_text(text: str, file_path_str: str) -> None:
    _atomic_write(file_path_str, lambda f: f.write(text), binary=False)


def atomic_write_bytes(payload: bytes, file_path_str: str) -> None:
    _atomic_write(file_path_str, lambda f: f.write(payload), binary=True)
