"""
Recurrent covariance estimators.

One network runs per side (speech, noise). Parameters are shared across all
frequencies: every bin is an independent sequence for the LSTM, so the model
is indifferent to the number of bins and therefore to the STFT window and hop.
The optional frequency-sharing stack mixes each bin with its neighbours
(three kernel-3 convolutions, so +/-3 bins) before the LSTM.
"""
import logging
from dataclasses import dataclass

import torch
from torch import nn

from ..autodiff.ops import conv1d_freq, lstm_cell, lstm_layer_weights, stack_complex
from ..autodiff.params import ModelParams
from ..enhancement.masks import EnhancerOutput
from .classical import CovarianceState
from .structure import VARIANTS, cholesky_product, cholesky_structure, rank1_accumulate, rank1_update, structure_matrices

logger = logging.getLogger(__name__)

F_INFO_LAYERS = 3


@dataclass
class EstimatorState:
    """Per-bin LSTM hidden and cell states, one [N, D] pair per layer."""
    h: list[torch.Tensor]
    c: list[torch.Tensor]

    @classmethod
    def zeros(cls, batch: int, hidden_size: int, num_layers: int, dtype=torch.float32) -> "EstimatorState":
        return cls([torch.zeros(batch, hidden_size, dtype=dtype) for _ in range(num_layers)],
                   [torch.zeros(batch, hidden_size, dtype=dtype) for _ in range(num_layers)])


@dataclass(frozen=True)
class EstimatorOutput:
    """
    One step's structured head output: a vector [N, M] for rank1, a
    lower-triangular factor [N, M, M] for cholesky, a matrix [N, M, M] for arbitrary.
    """
    variant: str
    value: torch.Tensor


class LearnedCovarianceEstimator(nn.Module):
    def __init__(self, num_mics: int, variant: str = "rank1", hidden_size: int = 128, num_layers: int = 2,
                 f_info: bool = True, f_info_channels: int = 64, rank1_init: float = 1e-3):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"Unknown estimator variant '{variant}', expected one of {VARIANTS}")
        self.num_mics = num_mics
        self.variant = variant
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.use_f_info = f_info
        self.f_info_channels = f_info_channels
        self.rank1_init = rank1_init

        raw_size = 2 * num_mics
        if f_info:
            sizes = [raw_size] + [f_info_channels] * F_INFO_LAYERS
            self.f_info = nn.ModuleList(nn.Conv1d(c_in, c_out, 3, padding=1) for c_in, c_out in zip(sizes, sizes[1:]))
            input_size = raw_size + f_info_channels
        else:
            self.f_info = nn.ModuleList()
            input_size = raw_size
        self.input_size = input_size
        self.lstm = nn.LSTM(input_size, hidden_size, num_layers=num_layers, batch_first=True)
        self.head_real = nn.Linear(hidden_size, self.output_size)
        self.head_imag = nn.Linear(hidden_size, self.output_size)

    @property
    def output_size(self) -> int:
        """Complex values per bin: M for rank1, M*M otherwise."""
        return self.num_mics if self.variant == "rank1" else self.num_mics ** 2

    @property
    def architecture(self) -> dict:
        return {"num-mics": self.num_mics, "variant": self.variant, "hidden-size": self.hidden_size,
                "num-layers": self.num_layers, "f-info": self.use_f_info,
                "f-info-channels": self.f_info_channels, "rank1-init": self.rank1_init}

    def f_psi(self, frames: torch.Tensor) -> torch.Tensor:
        """Stacked bins [..., F, 2M] to frequency-sharing features [..., F, C]."""
        if frames.shape[-2] < 3:
            raise ValueError(f"frequency sharing needs at least 3 bins, got {frames.shape[-2]}")
        x = frames
        for i, conv in enumerate(self.f_info):
            x = conv1d_freq(x, conv.weight, conv.bias)
            if i < len(self.f_info) - 1:
                x = torch.tanh(x)
        return x

    def inputs(self, bins: torch.Tensor) -> torch.Tensor:
        """Complex bins [B, M, T, F] to per-bin network inputs [B, T, F, I]."""
        raw = stack_complex(bins.permute(0, 2, 3, 1)).to(self.head_real.weight.dtype)
        if not self.use_f_info:
            return raw
        return torch.cat([raw, self.f_psi(raw)], dim=-1)

    def heads(self, hidden: torch.Tensor) -> torch.Tensor:
        out = torch.complex(self.head_real(hidden), self.head_imag(hidden))
        if self.variant == "rank1":
            return out
        return out.unflatten(-1, (self.num_mics, self.num_mics))

    def initial_matrix(self, dtype: torch.dtype) -> torch.Tensor:
        return self.rank1_init * torch.eye(self.num_mics, dtype=dtype)

    def forward(self, bins: torch.Tensor) -> torch.Tensor:
        """
        Sequence mode over whole scenes.

        Args:
            bins: complex estimate (speech or noise) [B, M, T, F].

        Returns:
            Covariance-domain matrices [B, T, F, M, M].
        """
        if bins.dim() != 4 or bins.shape[1] != self.num_mics:
            raise ValueError(f"expected complex bins [B, {self.num_mics}, T, F], got {tuple(bins.shape)}")
        batch, _, num_frames, num_bins = bins.shape
        x = self.inputs(bins)
        seq = x.permute(0, 2, 1, 3).reshape(batch * num_bins, num_frames, self.input_size)
        hidden, _ = self.lstm(seq)
        hidden = hidden.reshape(batch, num_bins, num_frames, self.hidden_size).permute(0, 2, 1, 3)
        out = self.heads(hidden)
        if self.variant == "rank1":
            return rank1_accumulate(out, self.initial_matrix(out.dtype))
        return structure_matrices(self.variant, out)


def g_theta_step(input_bin: torch.Tensor, state: EstimatorState, model: LearnedCovarianceEstimator,
                 features: torch.Tensor | None = None) -> tuple[EstimatorOutput, EstimatorState]:
    """
    One recurrent step for N independent bins.

    Args:
        input_bin: complex bin vectors [N, M].
        state: the bins' LSTM states.
        model: supplies the shared parameters.
        features: frequency-sharing features [N, C] when the model uses them.

    Returns:
        The structured head output and the advanced state.
    """
    if input_bin.dim() != 2 or input_bin.shape[1] != model.num_mics:
        raise ValueError(f"input_bin must be [N, {model.num_mics}], got {tuple(input_bin.shape)}")
    x = stack_complex(input_bin).to(model.head_real.weight.dtype)
    if model.use_f_info:
        if features is None:
            raise ValueError("model uses frequency-sharing features but none were given")
        x = torch.cat([x, features], dim=-1)
    h_next, c_next = [], []
    for layer in range(model.num_layers):
        h, c = lstm_cell(x, state.h[layer], state.c[layer], lstm_layer_weights(model.lstm, layer))
        h_next.append(h)
        c_next.append(c)
        x = h
    out = model.heads(x)
    if model.variant == "cholesky":
        out = cholesky_structure(out)
    return EstimatorOutput(model.variant, out), EstimatorState(h_next, c_next)


class StreamingEstimator:
    """
    Frame-by-frame inference with per-bin state; equal to sequence mode.
    Call ``reset`` between scenes.
    """

    def __init__(self, model: LearnedCovarianceEstimator, num_bins: int):
        self.model = model
        self.num_bins = num_bins
        self.reset()

    def reset(self) -> None:
        dtype = self.model.head_real.weight.dtype
        self.state = EstimatorState.zeros(self.num_bins, self.model.hidden_size, self.model.num_layers, dtype)
        complex_dtype = torch.complex128 if dtype == torch.float64 else torch.complex64
        self.accumulated = self.model.initial_matrix(complex_dtype).expand(self.num_bins, -1, -1).clone()

    @torch.no_grad()
    def step(self, frame: torch.Tensor) -> torch.Tensor:
        """Complex frame [M, F] to matrices [F, M, M]."""
        bins = frame.transpose(0, 1)
        features = None
        if self.model.use_f_info:
            features = self.model.f_psi(stack_complex(bins).to(self.model.head_real.weight.dtype))
        out, self.state = g_theta_step(bins, self.state, self.model, features)
        if out.variant == "rank1":
            self.accumulated = rank1_update(self.accumulated, out.value)
            return self.accumulated.clone()
        if out.variant == "cholesky":
            return cholesky_product(out.value)
        return out.value


class EstimatorPair(nn.Module):
    """Separate speech-side (emits phi_ss) and noise-side (emits phi_nn^-1) estimators."""

    def __init__(self, **kwargs):
        super().__init__()
        self.speech = LearnedCovarianceEstimator(**kwargs)
        self.noise = LearnedCovarianceEstimator(**kwargs)

    @property
    def architecture(self) -> dict:
        return dict(self.speech.architecture, kind="estimator-pair")

    def forward(self, speech_bins: torch.Tensor, noise_bins: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.speech(speech_bins), self.noise(noise_bins)


def build_estimator_pair(num_mics: int, variant: str, hidden_size: int = 128, num_layers: int = 2,
                         f_info: bool = True, f_info_channels: int = 64, rank1_init: float = 1e-3,
                         seed: int | None = None) -> ModelParams:
    if seed is not None:
        torch.manual_seed(seed)
    pair = EstimatorPair(num_mics=num_mics, variant=variant, hidden_size=hidden_size, num_layers=num_layers,
                         f_info=f_info, f_info_channels=f_info_channels, rank1_init=rank1_init)
    return ModelParams(pair, pair.architecture)


def pair_from_architecture(architecture: dict) -> ModelParams:
    return build_estimator_pair(
        num_mics=int(architecture["num-mics"]), variant=architecture["variant"],
        hidden_size=int(architecture["hidden-size"]), num_layers=int(architecture["num-layers"]),
        f_info=bool(architecture["f-info"]), f_info_channels=int(architecture["f-info-channels"]),
        rank1_init=float(architecture["rank1-init"]))


def run_estimator(est: EnhancerOutput, pair: EstimatorPair, dtype: torch.dtype = torch.complex64) -> CovarianceState:
    """
    Covariance stream [T, F, M, M] for one scene: the speech network sees the
    speech estimate, the noise network the noise estimate. States start from
    zero for every call.
    """
    speech = torch.as_tensor(est.speech_est.bins, dtype=dtype).unsqueeze(0)
    noise = torch.as_tensor(est.noise_est.bins, dtype=dtype).unsqueeze(0)
    with torch.no_grad():
        phi_ss, phi_nn_inv = pair(speech, noise)
    return CovarianceState(phi_ss=phi_ss[0], phi_nn_inv=phi_nn_inv[0])


def estimator_flops_per_frame(model: LearnedCovarianceEstimator, num_bins: int) -> int:
    """
    Multiply-accumulates per frame for one estimator (one MAC counts as one FLOP).

    Counts the frequency-sharing convolutions, LSTM gate products, element-wise
    gate arithmetic, both heads and the structuring step. Every weight is applied
    once per bin, so the count stays close to parameter count times bins.
    """
    per_bin = 0
    for conv in model.f_info:
        per_bin += conv.weight.numel()
    input_size = model.input_size
    for _ in range(model.num_layers):
        per_bin += 4 * model.hidden_size * (input_size + model.hidden_size) + 5 * model.hidden_size
        input_size = model.hidden_size
    per_bin += 2 * model.hidden_size * model.output_size
    m = model.num_mics
    per_bin += m * m if model.variant == "rank1" else (m ** 3 if model.variant == "cholesky" else 0)
    return per_bin * num_bins


def mvdr_flops_per_frame(num_mics: int, num_bins: int) -> int:
    """Steering normalisation, Phi^-1 v, the denominator, the division and the filter itself."""
    m = num_mics
    return num_bins * (m + m * m + m + m + m)
