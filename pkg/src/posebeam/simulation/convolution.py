import logging

import numpy as np
from scipy import signal

from ..models.signals import Waveform

logger = logging.getLogger(__name__)

DEFAULT_CROSSFADE = 256


def segment_bounds(num_samples: int, num_segments: int) -> np.ndarray:
    """R + 1 boundaries splitting num_samples into R near-equal segments."""
    return np.rint(np.linspace(0, num_samples, num_segments + 1)).astype(np.int64)


def crossfade_gains(num_samples: int, num_segments: int, crossfade: int = DEFAULT_CROSSFADE) -> np.ndarray:
    """
    Per-segment gains [R, N] that sum to one at every sample.

    Each boundary gets a linear ramp of ``crossfade`` samples centred on it,
    shortened so it never exceeds either neighbouring segment.
    """
    bounds = segment_bounds(num_samples, num_segments)
    gains = np.zeros((num_segments, num_samples))
    for r in range(num_segments):
        gains[r, bounds[r]:bounds[r + 1]] = 1.0

    for k in range(1, num_segments):
        width = min(crossfade, bounds[k] - bounds[k - 1], bounds[k + 1] - bounds[k])
        half = width // 2
        if half == 0:
            continue
        n = np.arange(bounds[k] - half, bounds[k] + half)
        ramp = (n - n[0] + 0.5) / (2 * half)
        gains[k - 1, n] = 1.0 - ramp
        gains[k, n] = ramp
    return gains


def time_varying_convolve(src: Waveform, rirs: np.ndarray, crossfade: int = DEFAULT_CROSSFADE) -> Waveform:
    """
    Convolves a mono source with a sequence of array impulse responses.

    The source is split into R equal segments; segment r is convolved with
    ``rirs[r]`` and neighbouring segments are blended by a linear crossfade.

    Args:
        src: single-channel source.
        rirs: impulse responses [R, M, taps].
        crossfade: ramp length in samples at each segment boundary.

    Returns:
        M-channel waveform of length N + taps - 1.
    """
    rirs = np.asarray(rirs, dtype=np.float64)
    if src.num_channels != 1:
        raise ValueError(f"source must be single-channel, got {src.num_channels} channels")
    if rirs.ndim != 3 or rirs.shape[0] < 1:
        raise ValueError(f"impulse responses must be [R, M, taps] with R >= 1, got {rirs.shape}")
    num_segments, num_mics, taps = rirs.shape
    x = src.samples[0]
    if num_segments > len(x):
        raise ValueError(f"{num_segments} segments do not fit in {len(x)} samples")

    if num_segments == 1 or np.all(rirs == rirs[0]):
        out = signal.fftconvolve(x[np.newaxis, :], rirs[0], axes=-1)
        return Waveform(out, src.sample_rate_hz)

    gains = crossfade_gains(len(x), num_segments, crossfade)
    out = np.zeros((num_mics, len(x) + taps - 1))
    for r in range(num_segments):
        support = np.nonzero(gains[r])[0]
        if len(support) == 0:
            continue
        start, stop = support[0], support[-1] + 1
        piece = gains[r, start:stop] * x[start:stop]
        out[:, start:stop + taps - 1] += signal.fftconvolve(piece[np.newaxis, :], rirs[r], axes=-1)
    logger.debug(f"Time-varying convolution: {num_segments} segments, {num_mics} mics, {taps} taps")
    return Waveform(out, src.sample_rate_hz)
