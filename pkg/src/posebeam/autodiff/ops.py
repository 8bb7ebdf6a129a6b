"""
Differentiable building blocks shared by the estimators and the enhancer.

Everything here is plain torch: autograd records the graph and ``backward``
accumulates gradients into the leaves. Complex values stay native complex
tensors; ``stack_complex`` / ``unstack_complex`` move them across real
network boundaries as [real..., imag...] feature pairs.
"""
import logging
import typing as t

import torch
import torch.nn.functional as F

logger = logging.getLogger(__name__)


class LstmWeights(t.NamedTuple):
    """One LSTM layer in torch's gate layout: rows are (input, forget, cell, output)."""
    weight_ih: torch.Tensor  # [4D, I]
    weight_hh: torch.Tensor  # [4D, D]
    bias_ih: torch.Tensor    # [4D]
    bias_hh: torch.Tensor    # [4D]

    @property
    def hidden_size(self) -> int:
        return self.weight_hh.shape[1]

    @property
    def input_size(self) -> int:
        return self.weight_ih.shape[1]


def lstm_layer_weights(lstm: torch.nn.LSTM, layer: int) -> LstmWeights:
    return LstmWeights(getattr(lstm, f"weight_ih_l{layer}"), getattr(lstm, f"weight_hh_l{layer}"),
                       getattr(lstm, f"bias_ih_l{layer}"), getattr(lstm, f"bias_hh_l{layer}"))


def lstm_cell(x: torch.Tensor, h: torch.Tensor, c: torch.Tensor,
              params: LstmWeights) -> tuple[torch.Tensor, torch.Tensor]:
    """
    One LSTM step.

    Args:
        x: input [B, I].
        h: hidden state [B, D].
        c: cell state [B, D].
        params: layer weights.

    Returns:
        (h', c'), each [B, D].
    """
    hidden = params.hidden_size
    if x.dim() != 2 or x.shape[1] != params.input_size:
        raise ValueError(f"LSTM input must be [B, {params.input_size}], got {tuple(x.shape)}")
    if h.shape != (x.shape[0], hidden) or c.shape != h.shape:
        raise ValueError(f"LSTM state must be [{x.shape[0]}, {hidden}], got {tuple(h.shape)} and {tuple(c.shape)}")

    gates = x @ params.weight_ih.T + params.bias_ih + h @ params.weight_hh.T + params.bias_hh
    i, f, g, o = gates.chunk(4, dim=1)
    c_next = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
    h_next = torch.sigmoid(o) * torch.tanh(c_next)
    return h_next, c_next


def conv1d_freq(x: torch.Tensor, kernels: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """
    Same-padded kernel-3 convolution along the frequency axis.

    Args:
        x: [..., F, C_in]; leading axes are independent (frames, scenes).
        kernels: [C_out, C_in, 3].
        bias: optional [C_out].

    Returns:
        [..., F, C_out].
    """
    if kernels.dim() != 3 or kernels.shape[2] != 3:
        raise ValueError(f"kernels must be [C_out, C_in, 3], got {tuple(kernels.shape)}")
    if x.dim() < 2 or x.shape[-1] != kernels.shape[1]:
        raise ValueError(f"input must be [..., F, {kernels.shape[1]}], got {tuple(x.shape)}")
    lead = x.shape[:-2]
    num_freq, c_in = x.shape[-2:]
    flat = x.reshape(-1, num_freq, c_in).transpose(1, 2)
    out = F.conv1d(flat, kernels, bias, padding=1)
    return out.transpose(1, 2).reshape(*lead, num_freq, kernels.shape[0])


def stack_complex(z: torch.Tensor) -> torch.Tensor:
    """Complex [..., M] to real [..., 2M] as (real parts, imaginary parts)."""
    return torch.cat([z.real, z.imag], dim=-1)


def unstack_complex(x: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`stack_complex`."""
    if x.shape[-1] % 2:
        raise ValueError(f"last axis must hold real/imaginary pairs, got size {x.shape[-1]}")
    real, imag = x.chunk(2, dim=-1)
    return torch.complex(real, imag)


def outer(a: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    """Batched a b^H for column vectors [..., M]."""
    b = a if b is None else b
    return a.unsqueeze(-1) * b.conj().unsqueeze(-2)


def hermitian(a: torch.Tensor) -> torch.Tensor:
    return a.conj().transpose(-2, -1)


def quadratic_form(a: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """v^H A v for batched matrices [..., M, M] and vectors [..., M]."""
    return (v.conj() * (a @ v.unsqueeze(-1)).squeeze(-1)).sum(dim=-1)


def real_dtype_for(precision: str) -> torch.dtype:
    return torch.float64 if precision == "float64" else torch.float32


def complex_dtype_for(precision: str) -> torch.dtype:
    return torch.complex128 if precision == "float64" else torch.complex64
