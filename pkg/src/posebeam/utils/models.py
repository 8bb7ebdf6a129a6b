"""
Weights files and the in-process weights cache.

Binary layout (all integers little-endian):

    magic  b"PBWT"
    u16    format version
    u32    entry count
    per entry:
        u16  name length, then the UTF-8 name
        u8   dtype code (0 float32, 1 float64, 2 int64)
        u8   ndim, then ndim x u32 dimensions
        raw little-endian data, C order

A JSON sidecar next to the file (same stem, ".json") records the architecture
hyperparameters needed to rebuild the model.
"""
import json
import logging
import os
import pathlib
import struct
import threading
import typing as t
from collections import OrderedDict

import numpy as np

from .io import atomic_write_bytes, atomic_write_json

logger = logging.getLogger(__name__)

MAGIC = b"PBWT"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}

ProgressCallback = t.Callable[[float, str], None]


class WeightsNotAvailableError(RuntimeError):
    def __init__(self, path: str, details: str):
        self.path = path
        self.details = details
        super().__init__(f"Weights {path} not available: {details}")


def sidecar_path(weights_path) -> pathlib.Path:
    return pathlib.Path(weights_path).with_suffix(".json")


def encode_weights(entries: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(entries))]
    for name, value in entries.items():
        arr = np.asarray(value)
        if arr.dtype not in _DTYPE_CODES:
            raise TypeError(f"Entry '{name}' has unsupported dtype {arr.dtype}")
        encoded_name = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    return b"".join(chunks)


def decode_weights(payload: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    """Parses a weights payload; any inconsistency raises WeightsNotAvailableError."""
    try:
        if payload[:4] != MAGIC:
            raise WeightsNotAvailableError(source, "bad magic bytes")
        version, count = struct.unpack_from("<HI", payload, 4)
        if version != FORMAT_VERSION:
            raise WeightsNotAvailableError(source, f"unsupported format version {version}")
        offset = 10
        entries = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset:offset + name_len].decode("utf-8")
            offset += name_len
            code, ndim = struct.unpack_from("<BB", payload, offset)
            offset += 2
            shape = struct.unpack_from(f"<{ndim}I", payload, offset)
            offset += 4 * ndim
            dtype = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if offset + nbytes > len(payload):
                raise WeightsNotAvailableError(source, f"entry '{name}' is truncated")
            entries[name] = np.frombuffer(payload, dtype=dtype, count=nbytes // dtype.itemsize,
                                          offset=offset).reshape(shape).astype(dtype.newbyteorder("="))
            offset += nbytes
        if offset != len(payload):
            raise WeightsNotAvailableError(source, f"{len(payload) - offset} trailing bytes")
        return entries
    except (struct.error, KeyError, UnicodeDecodeError) as e:
        raise WeightsNotAvailableError(source, f"corrupt file ({type(e).__name__}: {e})") from e


def write_weights(path, entries: dict[str, np.ndarray], architecture: dict) -> None:
    """Writes the binary weights and their JSON sidecar atomically."""
    atomic_write_bytes(encode_weights(entries), str(path))
    atomic_write_json({"format": MAGIC.decode("ascii"), "version": FORMAT_VERSION,
                       "architecture": architecture}, str(sidecar_path(path)))
    logger.info(f"Wrote {len(entries)} weight entries to {path}")


def read_weights(path) -> tuple[dict[str, np.ndarray], dict]:
    path_obj = pathlib.Path(path)
    if not path_obj.is_file():
        raise WeightsNotAvailableError(str(path), "file not found")
    entries = decode_weights(path_obj.read_bytes(), str(path))
    side = sidecar_path(path_obj)
    if not side.is_file():
        raise WeightsNotAvailableError(str(path), f"missing architecture sidecar {side.name}")
    try:
        with side.open("r", encoding="utf-8") as f:
            meta = json.load(f)
        architecture = dict(meta["architecture"])
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise WeightsNotAvailableError(str(path), f"unreadable sidecar: {e}") from e
    return entries, architecture


MAX_CACHED_WEIGHTS = 8

# Key: (resolved path, mtime_ns), Value: (entries, architecture); least recently used first
_weights_cache: OrderedDict[tuple[str, int], tuple[dict[str, np.ndarray], dict]] = OrderedDict()
_weights_cache_lock = threading.Lock()  # To protect access to _weights_cache


def ensure_loaded(path, progress_cb: ProgressCallback | None = None) -> tuple[dict[str, np.ndarray], dict]:
    """
    Returns the entries and architecture of a weights file, reading it at most
    once per modification time while it stays among the ``MAX_CACHED_WEIGHTS``
    most recently used files. Cached arrays are read-only; copy before mutating.

    Raises:
        WeightsNotAvailableError: missing or corrupt weights or sidecar.
    """
    path_obj = pathlib.Path(path).resolve()
    try:
        key = (str(path_obj), os.stat(path_obj).st_mtime_ns)
    except OSError as e:
        if progress_cb:
            progress_cb(-1.0, f"Error: {e}")
        raise WeightsNotAvailableError(str(path), "file not found") from e

    with _weights_cache_lock:
        if key in _weights_cache:
            _weights_cache.move_to_end(key)
            if progress_cb:
                progress_cb(100.0, f"Weights ready (from cache: {path_obj.name})")
            return _weights_cache[key]

    if progress_cb:
        progress_cb(0.0, f"Loading weights {path_obj.name}")
    try:
        entries, architecture = read_weights(path_obj)
    except WeightsNotAvailableError as e:
        if progress_cb:
            progress_cb(-1.0, f"Error: {e.details}")
        raise
    for arr in entries.values():
        arr.setflags(write=False)

    with _weights_cache_lock:
        # an older modification time of the same file is never looked up again
        for stale in [k for k in _weights_cache if k[0] == key[0]]:
            del _weights_cache[stale]
        _weights_cache[key] = (entries, architecture)
        while len(_weights_cache) > MAX_CACHED_WEIGHTS:
            evicted, _ = _weights_cache.popitem(last=False)
            logger.debug(f"Evicted cached weights {evicted[0]}")
    if progress_cb:
        progress_cb(100.0, f"Weights ready ({len(entries)} entries)")
    return entries, architecture


def cached_paths() -> list[str]:
    with _weights_cache_lock:
        return [path for path, _ in _weights_cache]


def clear_cache() -> None:
    with _weights_cache_lock:
        _weights_cache.clear()
