import logging
from pathlib import Path

import av
import numpy as np

from ..models.signals import DEFAULT_SAMPLE_RATE, Waveform
from .wav_io import read_wav

logger = logging.getLogger(__name__)

AUDIO_SUFFIXES = (".wav", ".flac", ".ogg", ".mp3", ".opus", ".m4a")


class DecodeError(RuntimeError):
    def __init__(self, path: str, details: str):
        self.path = path
        self.details = details
        super().__init__(f"Cannot decode {path}: {details}")


def list_audio_files(directory) -> list[Path]:
    """Sorted audio files under ``directory`` (recursive)."""
    root = Path(directory)
    if not root.is_dir():
        return []
    return sorted(p for p in root.rglob("*") if p.suffix.lower() in AUDIO_SUFFIXES and p.is_file())


def load_mono(path, sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """
    Decodes a corpus file to a mono float waveform.

    WAV goes through :func:`read_wav`; other containers are decoded with PyAV and
    down-mixed. The file must already be at ``sample_rate_hz``.
    """
    path = Path(path)
    if path.suffix.lower() == ".wav":
        w = read_wav(path, expected_rate=sample_rate_hz)
        return Waveform(w.samples.mean(axis=0, keepdims=True).astype(np.float64), w.sample_rate_hz)

    chunks = []
    try:
        with av.open(str(path)) as container:
            stream = container.streams.audio[0]
            if stream.rate != sample_rate_hz:
                raise DecodeError(str(path), f"sample rate {stream.rate} Hz, expected {sample_rate_hz} Hz")
            resampler = av.AudioResampler(format="fltp", layout="mono", rate=stream.rate)
            for frame in container.decode(stream):
                for converted in resampler.resample(frame):
                    chunks.append(converted.to_ndarray().reshape(-1))
            for converted in resampler.resample(None):
                chunks.append(converted.to_ndarray().reshape(-1))
    except DecodeError:
        raise
    except (av.error.FFmpegError, IndexError, OSError) as e:
        logger.error(f"PyAV failed on {path}: {e}", exc_info=True)
        raise DecodeError(str(path), str(e)) from e

    if not chunks:
        raise DecodeError(str(path), "no audio frames")
    samples = np.concatenate(chunks).astype(np.float64)
    return Waveform(samples[np.newaxis, :], sample_rate_hz)
