import logging
from dataclasses import dataclass

import numpy as np
import torch

from ..audio.stft import stft
from ..models.signals import Spectrogram, StftConfig, Waveform
from ..simulation.scene import REFERENCE_MIC, SceneBundle

logger = logging.getLogger(__name__)

IRM_KINDS = ("magnitude", "power")


@dataclass(frozen=True)
class Mask:
    """Real time-frequency mask [T, F] with values in [0, 1]."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"mask must be [T, F], got shape {values.shape}")
        if not np.all(np.isfinite(values)) or values.min(initial=0.0) < 0.0 or values.max(initial=0.0) > 1.0:
            raise ValueError("mask values must be finite and within [0, 1]")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class EnhancerOutput:
    """Speech and noise estimates with the mixture's [M, T, F] shape."""
    speech_est: Spectrogram
    noise_est: Spectrogram

    def __post_init__(self):
        if self.speech_est.bins.shape != self.noise_est.bins.shape:
            raise ValueError(f"speech and noise estimates differ in shape: "
                             f"{self.speech_est.bins.shape} vs {self.noise_est.bins.shape}")

    @property
    def num_channels(self) -> int:
        return self.speech_est.num_channels


def irm(reference: Spectrogram, mixture: Spectrogram, kind: str = "magnitude") -> Mask:
    """
    Ideal ratio mask |S| / (|S| + |X - S|) at the reference microphone.

    ``kind="power"`` squares both magnitudes. Bins with no speech and no
    noise get 0.
    """
    if kind not in IRM_KINDS:
        raise ValueError(f"Unknown IRM kind '{kind}', expected one of {IRM_KINDS}")
    if reference.bins.shape[1:] != mixture.bins.shape[1:]:
        raise ValueError(f"reference {reference.bins.shape} and mixture {mixture.bins.shape} differ")
    s = reference.bins[0]
    x = mixture.bins[0]
    speech_mag = np.abs(s)
    noise_mag = np.abs(x - s)
    if kind == "power":
        speech_mag, noise_mag = speech_mag ** 2, noise_mag ** 2
    denom = speech_mag + noise_mag
    values = np.divide(speech_mag, denom, out=np.zeros_like(denom), where=denom > 0)
    return Mask(np.clip(values, 0.0, 1.0))


def apply_mask(mask: Mask, mixture: Spectrogram) -> EnhancerOutput:
    """
    Applies one mask to every channel: speech = mask * x, noise = (1 - mask) * x.

    The speech estimate is re-derived from the noise estimate so that
    speech_est + noise_est reproduces the mixture exactly in floating point.
    """
    if mask.shape != mixture.bins.shape[1:]:
        raise ValueError(f"mask {mask.shape} does not match mixture frames/bins {mixture.bins.shape[1:]}")
    x = mixture.bins
    noise = x - mask.values * x
    speech = x - noise
    return EnhancerOutput(mixture.with_bins(speech), mixture.with_bins(noise))


def apply_mask_torch(mask: torch.Tensor, mixture: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Differentiable mask application; mask [..., T, F], mixture [..., M, T, F]."""
    speech = mask.unsqueeze(-3) * mixture
    return speech, mixture - speech


def oracle_split(scene: SceneBundle, config: StftConfig | None = None) -> EnhancerOutput:
    """Ground-truth split: the echoic speech and everything else in the mixture."""
    config = config or StftConfig()
    speech = stft(scene.speech_echoic, config)
    residual = scene.mixture.samples.astype(np.float64) - scene.speech_echoic.samples.astype(np.float64)
    noise = stft(Waveform(residual, scene.sample_rate_hz), config)
    return EnhancerOutput(speech, noise)


def irm_enhance(scene: SceneBundle, config: StftConfig, reference: str = "echoic",
                kind: str = "magnitude") -> EnhancerOutput:
    """Echoic or anechoic IRM at the reference mic, applied to all channels."""
    mixture = stft(scene.mixture, config)
    if reference == "echoic":
        clean = scene.speech_echoic.channel(REFERENCE_MIC)
    elif reference == "anechoic":
        clean = scene.reference()
    else:
        raise ValueError(f"Unknown IRM reference '{reference}'")
    mask = irm(stft(clean, config), mixture.channel(REFERENCE_MIC), kind)
    return apply_mask(mask, mixture)
