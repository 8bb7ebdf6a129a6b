import logging

import numpy as np
import torch
from torch import nn

from ..autodiff.params import ModelParams
from ..models.signals import Spectrogram
from .masks import Mask

logger = logging.getLogger(__name__)

ENHANCER_HIDDEN = {"lstm256": 256, "lstm512": 512}
NUM_LAYERS = 3


class MaskNet(nn.Module):
    """
    Causal single-channel mask estimator: log(1 + |X|) of all bins in one
    frame goes through a unidirectional LSTM stack and a sigmoid layer.
    """

    def __init__(self, num_bins: int, hidden_size: int = 256, num_layers: int = NUM_LAYERS):
        super().__init__()
        self.num_bins = num_bins
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.lstm = nn.LSTM(num_bins, hidden_size, num_layers=num_layers, batch_first=True)
        self.head = nn.Linear(hidden_size, num_bins)

    @property
    def architecture(self) -> dict:
        return {"kind": "mask-lstm", "num-bins": self.num_bins, "hidden-size": self.hidden_size,
                "num-layers": self.num_layers}

    @staticmethod
    def features(bins: torch.Tensor) -> torch.Tensor:
        return torch.log1p(bins.abs())

    def forward(self, bins: torch.Tensor) -> torch.Tensor:
        """Complex reference-mic bins [B, T, F] to a mask [B, T, F]."""
        if bins.shape[-1] != self.num_bins:
            raise ValueError(f"enhancer was built for {self.num_bins} bins, got {bins.shape[-1]}")
        hidden, _ = self.lstm(self.features(bins).to(self.head.weight.dtype))
        return torch.sigmoid(self.head(hidden))


def build_mask_net(enhancer: str, num_bins: int, hidden_override: int | None = None) -> ModelParams:
    hidden = hidden_override or ENHANCER_HIDDEN[enhancer]
    net = MaskNet(num_bins, hidden)
    return ModelParams(net, net.architecture)


def lstm_mask(mixture_ref: Spectrogram, net: MaskNet) -> Mask:
    """Runs the mask network over a single-channel spectrogram, frame by frame in time order."""
    if mixture_ref.num_channels != 1:
        raise ValueError(f"lstm_mask expects the reference channel only, got {mixture_ref.num_channels} channels")
    dtype = net.head.weight.dtype
    bins = torch.as_tensor(mixture_ref.bins, dtype=torch.complex128 if dtype == torch.float64 else torch.complex64)
    with torch.no_grad():
        mask = net(bins)[0]
    return Mask(np.clip(mask.double().numpy(), 0.0, 1.0))
