import logging
import os
import struct
import tempfile
import warnings
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from ..models.signals import DEFAULT_SAMPLE_RATE, Waveform

logger = logging.getLogger(__name__)

PCM16_SCALE = 32768.0
SUPPORTED_ENCODINGS = ("pcm16", "float32")


class WavFormatError(ValueError):
    def __init__(self, path: str, details: str):
        self.path = path
        self.details = details
        super().__init__(f"Cannot read WAV {path}: {details}")


def _check_complete(path_str: str) -> None:
    """Compares the RIFF size field with the bytes actually on disk."""
    with open(path_str, "rb") as f:
        header = f.read(12)
    if len(header) < 12 or header[8:12] != b"WAVE" or header[:4] not in (b"RIFF", b"RIFX"):
        return
    (declared,) = struct.unpack("<I" if header[:4] == b"RIFF" else ">I", header[4:8])
    actual = os.path.getsize(path_str)
    if actual < declared + 8:
        raise WavFormatError(path_str, f"truncated file ({actual} of {declared + 8} bytes)")


def read_wav(path, expected_rate: int | None = DEFAULT_SAMPLE_RATE) -> Waveform:
    """
    Reads a PCM16 or IEEE float32 WAV file of any channel count.

    PCM16 samples are scaled to [-1, 1). A file whose data chunk ends before the
    size its header declares is rejected rather than returned partially.

    Raises:
        WavFormatError: unsupported encoding, malformed header, truncated data or
            a sample rate other than ``expected_rate`` (pass None to accept any).
    """
    path_str = str(path)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", wavfile.WavFileWarning)
            rate, data = wavfile.read(path_str, mmap=False)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError, OSError, struct.error) as e:
        logger.error(f"Failed to parse WAV {path_str}: {e}", exc_info=True)
        raise WavFormatError(path_str, str(e)) from e

    for warning in caught:
        message = str(warning.message)
        if "prematurely" in message or "EOF" in message:
            raise WavFormatError(path_str, f"truncated file ({message})")
        logger.debug(f"WAV {path_str}: {message}")
    _check_complete(path_str)

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data
    else:
        raise WavFormatError(path_str, f"unsupported sample type {data.dtype}; expected PCM16 or float32")

    if expected_rate is not None and rate != expected_rate:
        raise WavFormatError(path_str, f"sample rate {rate} Hz, expected {expected_rate} Hz")

    samples = samples.reshape(samples.shape[0], -1).T
    return Waveform(samples=np.ascontiguousarray(samples), sample_rate_hz=int(rate))


def write_wav(path, w: Waveform, encoding: str = "float32") -> None:
    """
    Writes a waveform atomically as PCM16 or float32.

    Float32 round trips bit-exactly; PCM16 clips to [-1, 1) and rounds to the
    nearest step.
    """
    if encoding not in SUPPORTED_ENCODINGS:
        raise ValueError(f"Unsupported WAV encoding '{encoding}', expected one of {SUPPORTED_ENCODINGS}")

    if encoding == "float32":
        data = w.samples.T.astype(np.float32)
    else:
        scaled = np.round(w.samples.T * PCM16_SCALE)
        data = np.clip(scaled, -PCM16_SCALE, PCM16_SCALE - 1).astype(np.int16)
    if data.shape[1] == 1:
        data = data[:, 0]

    path_obj = Path(path)
    path_obj.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(dir=path_obj.parent, prefix=path_obj.name + '.', suffix='.tmp',
                                     delete=False) as tmp_file:
        temp_path = tmp_file.name
    try:
        wavfile.write(temp_path, w.sample_rate_hz, np.ascontiguousarray(data))
        os.replace(temp_path, path_obj)
    except Exception as e:
        logger.error(f"Error writing WAV to {path_obj}: {e}", exc_info=True)
        if Path(temp_path).exists():
            os.remove(temp_path)
        raise
