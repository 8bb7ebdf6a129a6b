"""
MVDR beamforming from a speech covariance and an inverse noise covariance.

All functions batch over leading axes ([..., M, M] matrices, [..., M]
vectors) and stay differentiable so the learned pipeline can train through
them.
"""
import logging
from dataclasses import dataclass

import numpy as np
import torch

from ..autodiff.ops import hermitian, quadratic_form
from ..models.signals import Spectrogram

logger = logging.getLogger(__name__)

STABILIZER_SCALE = 1e-8
STABILIZER_RELATIVE = 1e-3
POWER_ITERATIONS = 100
POWER_TOLERANCE = 1e-8


class SteeringError(ValueError):
    def __init__(self, count: int):
        self.count = count
        super().__init__(f"Speech covariance has a zero first column in {count} bin(s); no steering vector")


@dataclass(frozen=True)
class SteeringResult:
    """Unit-norm steering vectors [..., M] and where power iteration fell back to the first column."""
    vectors: torch.Tensor
    fallback: torch.Tensor


@dataclass(frozen=True)
class BeamformerWeights:
    """MVDR weights [..., M] and where the denominator stabiliser changed the result."""
    weights: torch.Tensor
    stabilized: torch.Tensor

    @property
    def num_stabilized(self) -> int:
        return int(self.stabilized.sum())


def _phase_fix(v: torch.Tensor) -> torch.Tensor:
    """Rotates each vector so that component 0 is real and non-negative."""
    first = v[..., :1]
    magnitude = first.abs()
    phase = torch.where(magnitude > 0, first.conj() / torch.where(magnitude > 0, magnitude, torch.ones_like(magnitude)),
                        torch.ones_like(first))
    return v * phase


def steer_first_column(phi_ss: torch.Tensor) -> torch.Tensor:
    """
    Normalised first column of the speech covariance.

    Raises:
        SteeringError: any bin has an all-zero first column.
    """
    column = phi_ss[..., :, 0]
    norm = torch.linalg.vector_norm(column, dim=-1, keepdim=True)
    zero = norm == 0
    if bool(zero.any()):
        raise SteeringError(int(zero.sum()))
    return column / norm


def _tolerance_for(dtype: torch.dtype, tol: float) -> float:
    return max(tol, 10.0 * torch.finfo(dtype).eps)


def steer_principal(phi_ss: torch.Tensor, max_iter: int = POWER_ITERATIONS,
                    tol: float = POWER_TOLERANCE) -> SteeringResult:
    """
    Dominant eigenvector of (A + A^H) / 2 by batched power iteration.

    Iteration starts from the column of largest norm. Vectors are unit-norm
    with component 0 real and non-negative. Bins that have not converged after
    ``max_iter`` steps use the first column instead and are flagged.
    """
    a = 0.5 * (phi_ss + hermitian(phi_ss))
    column_norms = torch.linalg.vector_norm(a, dim=-2)
    start = column_norms.argmax(dim=-1)
    v = torch.gather(a, -1, start[..., None, None].expand(*a.shape[:-1], 1)).squeeze(-1)
    v = _phase_fix(v / torch.linalg.vector_norm(v, dim=-1, keepdim=True).clamp_min(torch.finfo(a.real.dtype).tiny))

    tolerance = _tolerance_for(a.real.dtype, tol)
    converged = torch.zeros(v.shape[:-1], dtype=torch.bool)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        w = (a @ v.unsqueeze(-1)).squeeze(-1)
        norm = torch.linalg.vector_norm(w, dim=-1, keepdim=True)
        w = _phase_fix(w / norm.clamp_min(torch.finfo(a.real.dtype).tiny))
        delta = torch.linalg.vector_norm(w - v, dim=-1)
        converged = (delta < tolerance) & (norm.squeeze(-1) > 0)
        v = w
        if bool(converged.all()):
            break

    fallback = ~converged
    if bool(fallback.any()):
        logger.warning(f"Power iteration did not converge in {int(fallback.sum())} bin(s) after {iterations} "
                       f"iterations; using the first column there")
        first = steer_first_column(phi_ss.masked_fill(~fallback[..., None, None], 1.0))
        v = torch.where(fallback[..., None], _phase_fix(first), v)
    return SteeringResult(v, fallback)


def steer(phi_ss: torch.Tensor, mode: str) -> SteeringResult:
    if mode == "first_column":
        v = steer_first_column(phi_ss)
        return SteeringResult(v, torch.zeros(v.shape[:-1], dtype=torch.bool))
    if mode == "principal":
        return steer_principal(phi_ss)
    raise ValueError(f"Unknown steering mode '{mode}'")


def mvdr_weights(phi_nn_inv: torch.Tensor, v: torch.Tensor) -> BeamformerWeights:
    """
    w = Phi^-1 v / (v^H Phi^-1 v).

    delta = 1e-8 ||Phi^-1||_F ||v||^2 follows the scale of both inputs, so
    scaling Phi^-1 leaves w unchanged. Where |v^H Phi^-1 v| < 1e3 * delta the
    denominator grows by delta along its own phase, so it never cancels, and the
    bin is flagged. Elsewhere the division is exact, so w^H v = 1.
    """
    if phi_nn_inv.shape[:-1] != v.shape:
        raise ValueError(f"inverse noise covariance {tuple(phi_nn_inv.shape)} and steering {tuple(v.shape)} differ")
    numerator = (phi_nn_inv @ v.unsqueeze(-1)).squeeze(-1)
    denominator = quadratic_form(phi_nn_inv, v)
    magnitude = denominator.abs()
    scale = torch.linalg.matrix_norm(phi_nn_inv) * (v.abs() ** 2).sum(dim=-1)
    delta = STABILIZER_SCALE * scale + torch.finfo(magnitude.dtype).tiny
    stabilized = magnitude < delta / STABILIZER_RELATIVE
    nonzero = magnitude > 0
    phase = torch.where(nonzero, denominator / torch.where(nonzero, magnitude, torch.ones_like(magnitude)),
                        torch.ones_like(denominator))
    denominator = denominator + torch.where(stabilized, delta * phase, torch.zeros_like(denominator))
    return BeamformerWeights(numerator / denominator.unsqueeze(-1), stabilized)


def beamform(weights: torch.Tensor, mixture: torch.Tensor) -> torch.Tensor:
    """
    y[t, f] = sum_m conj(w_m[t, f]) x_m[t, f].

    Args:
        weights: [..., T, F, M], or [..., F, M] for time-invariant weights.
        mixture: [..., M, T, F].

    Returns:
        [..., T, F].
    """
    x = mixture.movedim(-3, -1)
    if weights.dim() == x.dim() - 1:
        weights = weights.unsqueeze(-3)
    if weights.shape[-1] != x.shape[-1] or weights.shape[-2] != x.shape[-2]:
        raise ValueError(f"weights {tuple(weights.shape)} do not match mixture {tuple(mixture.shape)}")
    return (weights.conj() * x).sum(dim=-1)


def apply_beamformer(weights: torch.Tensor | np.ndarray, mixture: Spectrogram) -> Spectrogram:
    """Filters an M-channel spectrogram down to one channel."""
    w = torch.as_tensor(weights)
    if not w.is_complex():
        raise ValueError(f"beamformer weights must be complex, got {w.dtype}")
    num_frames = mixture.num_frames
    if w.dim() == 3 and w.shape[0] != num_frames:
        raise ValueError(f"weights cover {w.shape[0]} frames, mixture has {num_frames}")
    x = torch.as_tensor(mixture.bins).to(w.dtype)
    y = beamform(w, x)
    return mixture.with_bins(y.detach().cpu().numpy()[np.newaxis])


def condition_numbers(phi: torch.Tensor) -> torch.Tensor:
    """2-norm condition number per [..., M, M] matrix; inf for singular ones."""
    singular = torch.linalg.svdvals(phi.detach())
    smallest = singular[..., -1]
    return torch.where(smallest > 0, singular[..., 0] / torch.where(smallest > 0, smallest, torch.ones_like(smallest)),
                       torch.full_like(smallest, float("inf")))
