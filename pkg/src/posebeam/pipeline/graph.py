"""
The differentiable pipeline used for training: mask enhancer (optional),
covariance estimators, MVDR, inverse STFT and the SI-SDR loss in one torch graph.
"""
import logging
from dataclasses import dataclass

import torch

from ..audio.stft import istft_torch
from ..beamforming.mvdr import beamform, mvdr_weights, steer
from ..enhancement.masks import apply_mask_torch
from ..metrics.si_sdr import neg_si_sdr_loss
from ..models.signals import StftConfig
from ..simulation.scene import REFERENCE_MIC

logger = logging.getLogger(__name__)


@dataclass
class GraphBatch:
    """
    Stacked training scenes.

    Attributes:
        mixture: complex [B, M, T, F].
        reference: anechoic reference [B, N].
        speech: precomputed speech estimates [B, M, T, F]; None when the mask network runs in the graph.
        noise: precomputed noise estimates, as ``speech``.
    """
    mixture: torch.Tensor
    reference: torch.Tensor
    speech: torch.Tensor | None = None
    noise: torch.Tensor | None = None

    @property
    def num_samples(self) -> int:
        return self.reference.shape[-1]


def masked_estimates(mask_net: torch.nn.Module, mixture: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Runs the mask network on the reference mic and applies the mask to every channel."""
    mask = mask_net(mixture[:, REFERENCE_MIC])
    return apply_mask_torch(mask.to(mixture.real.dtype), mixture)


def beamformed_output(batch: GraphBatch, config: StftConfig, *, estimator: torch.nn.Module | None = None,
                      mask_net: torch.nn.Module | None = None, steering: str = "first_column") -> torch.Tensor:
    """
    Time-domain pipeline output [B, N].

    Without an estimator the masked reference microphone is the output.
    """
    if mask_net is not None:
        speech, noise = masked_estimates(mask_net, batch.mixture)
    else:
        if batch.speech is None or batch.noise is None:
            raise ValueError("batch carries no speech/noise estimates and no mask network was given")
        speech, noise = batch.speech, batch.noise

    if estimator is None:
        output = speech[:, REFERENCE_MIC]
    else:
        phi_ss, phi_nn_inv = estimator(speech, noise)
        v = steer(phi_ss, steering).vectors
        weights = mvdr_weights(phi_nn_inv, v).weights
        output = beamform(weights, batch.mixture.to(weights.dtype))
    return istft_torch(output, config, batch.num_samples)


def pipeline_loss(batch: GraphBatch, config: StftConfig, *, estimator: torch.nn.Module | None = None,
                  mask_net: torch.nn.Module | None = None, steering: str = "first_column") -> torch.Tensor:
    """Mean negative SI-SDR of the pipeline output against the anechoic reference."""
    output = beamformed_output(batch, config, estimator=estimator, mask_net=mask_net, steering=steering)
    return neg_si_sdr_loss(output, batch.reference.to(output.dtype))


def per_scene_si_sdr(batch: GraphBatch, config: StftConfig, **kwargs) -> list[float]:
    """SI-SDR in dB for each scene of the batch, without building a graph."""
    with torch.no_grad():
        output = beamformed_output(batch, config, **kwargs)
        reference = batch.reference.to(output.dtype)
        return [float(-neg_si_sdr_loss(output[i:i + 1], reference[i:i + 1])) for i in range(output.shape[0])]
