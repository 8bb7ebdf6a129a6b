import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 16000


@dataclass(frozen=True)
class Waveform:
    """
    Multichannel time-domain signal.

    Attributes:
        samples: Real array shaped [channel, sample].
        sample_rate_hz: Sampling rate, 16 kHz unless a caller overrides it.
    """
    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2:
            raise ValueError(f"Waveform samples must be [channel, sample], got shape {samples.shape}")
        if not np.issubdtype(samples.dtype, np.floating):
            samples = samples.astype(np.float64)
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("Waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate_hz

    def channel(self, index: int) -> "Waveform":
        return Waveform(self.samples[index:index + 1], self.sample_rate_hz)

    def truncated(self, num_samples: int) -> "Waveform":
        return Waveform(self.samples[:, :num_samples], self.sample_rate_hz)

    def __repr__(self):
        return (f"<Waveform(channels={self.num_channels}, samples={self.num_samples}, "
                f"rate={self.sample_rate_hz}, dtype={self.samples.dtype})>")


@dataclass(frozen=True)
class StftConfig:
    """Frame length and hop (in samples) of the Hann STFT."""
    window_len: int = 512
    hop: int = 256
    window_kind: str = "hann"

    def __post_init__(self):
        if self.window_kind != "hann":
            raise ValueError(f"Unsupported window kind '{self.window_kind}'")
        if self.window_len <= 0 or self.window_len % 2:
            raise ValueError(f"window_len must be a positive even number, got {self.window_len}")
        if self.hop <= 0 or self.hop > self.window_len:
            raise ValueError(f"hop must be in [1, window_len], got {self.hop}")
        if not signal.check_NOLA(self.window(), self.window_len, self.window_len - self.hop):
            raise ValueError(f"Hann window {self.window_len} with hop {self.hop} cannot be inverted")

    @property
    def num_bins(self) -> int:
        return self.window_len // 2 + 1

    def window(self) -> np.ndarray:
        # Periodic Hann, the DFT-even form.
        return signal.get_window("hann", self.window_len, fftbins=True)

    def is_cola(self) -> bool:
        return bool(signal.check_COLA(self.window(), self.window_len, self.window_len - self.hop))

    def num_frames(self, num_samples: int) -> int:
        """Frames needed to cover num_samples, the last one zero-padded."""
        if num_samples < self.window_len:
            return 0
        return -(-(num_samples - self.window_len) // self.hop) + 1

    def scaled(self, window_factor: float = 1.0, hop_factor: float = 1.0) -> "StftConfig":
        return replace(self, window_len=int(self.window_len * window_factor), hop=int(self.hop * hop_factor))


@dataclass(frozen=True)
class Spectrogram:
    """
    Complex one-sided STFT shaped [channel M, frame T, frequency F].

    ``num_samples`` remembers the analysed waveform length so synthesis can
    return a signal of the original size.
    """
    bins: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE
    num_samples: int | None = None

    def __post_init__(self):
        bins = np.asarray(self.bins)
        if bins.ndim == 2:
            bins = bins[np.newaxis]
        if bins.ndim != 3:
            raise ValueError(f"Spectrogram bins must be [channel, frame, frequency], got {bins.shape}")
        if bins.shape[2] != self.config.num_bins:
            raise ValueError(f"Expected {self.config.num_bins} frequency bins, got {bins.shape[2]}")
        if not np.all(np.isfinite(bins)):
            raise ValueError("Spectrogram contains non-finite bins")
        object.__setattr__(self, "bins", bins)

    @property
    def num_channels(self) -> int:
        return self.bins.shape[0]

    @property
    def num_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def num_bins(self) -> int:
        return self.bins.shape[2]

    def channel(self, index: int) -> "Spectrogram":
        return replace(self, bins=self.bins[index:index + 1])

    def with_bins(self, bins: np.ndarray) -> "Spectrogram":
        return replace(self, bins=bins)

    def __repr__(self):
        return (f"<Spectrogram(channels={self.num_channels}, frames={self.num_frames}, "
                f"bins={self.num_bins}, window={self.config.window_len}, hop={self.config.hop})>")
