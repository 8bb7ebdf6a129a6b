"""
Hann STFT analysis and weighted overlap-add synthesis.

Framing convention: frame t starts at sample t * hop, there is no centring, and
the final partial frame is zero-padded, so a signal of N >= window_len samples
has ceil((N - window_len) / hop) + 1 frames. Synthesis divides by the
overlap-added squared window, which keeps ``stft`` output on the scale of a
plain DFT of the windowed frame.
"""
import logging

import numpy as np
import torch
import torch.nn.functional as F

from ..models.signals import Spectrogram, StftConfig, Waveform

logger = logging.getLogger(__name__)

_ENVELOPE_FLOOR = 1e-10


class SignalTooShortError(ValueError):
    def __init__(self, num_samples: int, window_len: int):
        self.num_samples = num_samples
        self.window_len = window_len
        super().__init__(f"Signal of {num_samples} samples is shorter than one {window_len}-sample window")


def padded_length(config: StftConfig, num_frames: int) -> int:
    return (num_frames - 1) * config.hop + config.window_len


def interior_slice(config: StftConfig, num_samples: int) -> slice:
    """Samples covered by at least two full frames on each side of the edges."""
    return slice(config.window_len, max(config.window_len, num_samples - config.window_len))


def synthesis_envelope(config: StftConfig, num_frames: int) -> np.ndarray:
    """Overlap-added squared window, the WOLA normalisation."""
    window_sq = config.window() ** 2
    envelope = np.zeros(padded_length(config, num_frames))
    for t in range(num_frames):
        start = t * config.hop
        envelope[start:start + config.window_len] += window_sq
    return envelope


def stft(w: Waveform, c: StftConfig | None = None) -> Spectrogram:
    c = c or StftConfig()
    if w.num_samples < c.window_len:
        raise SignalTooShortError(w.num_samples, c.window_len)

    num_frames = c.num_frames(w.num_samples)
    padded = np.zeros((w.num_channels, padded_length(c, num_frames)), dtype=np.float64)
    padded[:, :w.num_samples] = w.samples

    frames = np.lib.stride_tricks.sliding_window_view(padded, c.window_len, axis=-1)[:, ::c.hop]
    bins = np.fft.rfft(frames * c.window(), axis=-1)
    return Spectrogram(bins=bins, config=c, sample_rate_hz=w.sample_rate_hz, num_samples=w.num_samples)


def istft(s: Spectrogram) -> Waveform:
    c = s.config
    frames = np.fft.irfft(s.bins, n=c.window_len, axis=-1) * c.window()
    out = np.zeros((s.num_channels, padded_length(c, s.num_frames)))
    for t in range(s.num_frames):
        start = t * c.hop
        out[:, start:start + c.window_len] += frames[:, t]

    envelope = synthesis_envelope(c, s.num_frames)
    nonzero = envelope > _ENVELOPE_FLOOR
    out[:, nonzero] /= envelope[nonzero]
    out[:, ~nonzero] = 0.0

    length = s.num_samples if s.num_samples is not None else out.shape[1]
    return Waveform(samples=out[:, :length], sample_rate_hz=s.sample_rate_hz)


def istft_torch(bins: torch.Tensor, config: StftConfig, num_samples: int | None = None) -> torch.Tensor:
    """
    Differentiable twin of :func:`istft` for the training graph.

    Args:
        bins: complex tensor [..., T, F].
        config: STFT configuration the bins were produced with.
        num_samples: optional output length.

    Returns:
        Real tensor [..., num_samples].
    """
    lead = bins.shape[:-2]
    num_frames = bins.shape[-2]
    real_dtype = bins.real.dtype
    window = torch.as_tensor(config.window(), dtype=real_dtype, device=bins.device)

    frames = torch.fft.irfft(bins, n=config.window_len, dim=-1) * window
    frames = frames.reshape(-1, num_frames, config.window_len).transpose(1, 2)
    length = padded_length(config, num_frames)
    out = F.fold(frames, output_size=(1, length), kernel_size=(1, config.window_len), stride=(1, config.hop))
    out = out.reshape(*lead, length)

    envelope = torch.as_tensor(synthesis_envelope(config, num_frames), dtype=real_dtype, device=bins.device)
    nonzero = envelope > _ENVELOPE_FLOOR
    out = torch.where(nonzero, out / torch.where(nonzero, envelope, torch.ones_like(envelope)), torch.zeros_like(out))
    if num_samples is not None:
        out = out[..., :num_samples]
    return out
