"""
Sample-average covariance estimators: one acausal estimate per scene (fixed)
and a causal sliding-window estimate (buffered).
"""
import logging
from dataclasses import dataclass

import numpy as np
import torch

from ..enhancement.masks import EnhancerOutput

logger = logging.getLogger(__name__)

LOADING_FACTOR = 1e-6
LOADING_FLOOR = 1e-10
BUFFER_GRID = (5, 10, 15, 20, 25, 30, 40, 50)


@dataclass(frozen=True)
class CovarianceState:
    """
    Speech covariance and inverse noise covariance, [F, M, M] for a single
    estimate or [T, F, M, M] for a per-frame stream. Arrays are numpy or torch.
    """
    phi_ss: np.ndarray | torch.Tensor
    phi_nn_inv: np.ndarray | torch.Tensor

    def __post_init__(self):
        if tuple(self.phi_ss.shape) != tuple(self.phi_nn_inv.shape):
            raise ValueError(f"phi_ss {tuple(self.phi_ss.shape)} and phi_nn_inv {tuple(self.phi_nn_inv.shape)} differ")
        if self.phi_ss.ndim not in (3, 4) or self.phi_ss.shape[-1] != self.phi_ss.shape[-2]:
            raise ValueError(f"covariances must be [F, M, M] or [T, F, M, M], got {tuple(self.phi_ss.shape)}")

    @property
    def is_stream(self) -> bool:
        return self.phi_ss.ndim == 4

    @property
    def num_mics(self) -> int:
        return self.phi_ss.shape[-1]

    def frame(self, t: int) -> "CovarianceState":
        if not self.is_stream:
            return self
        return CovarianceState(self.phi_ss[t], self.phi_nn_inv[t])

    def as_stream(self, num_frames: int) -> "CovarianceState":
        """Repeats a time-invariant estimate over ``num_frames``."""
        if self.is_stream:
            return self
        if isinstance(self.phi_ss, torch.Tensor):
            return CovarianceState(self.phi_ss.expand(num_frames, *self.phi_ss.shape),
                                   self.phi_nn_inv.expand(num_frames, *self.phi_nn_inv.shape))
        return CovarianceState(np.broadcast_to(self.phi_ss, (num_frames, *self.phi_ss.shape)),
                               np.broadcast_to(self.phi_nn_inv, (num_frames, *self.phi_nn_inv.shape)))

    def to_torch(self, dtype: torch.dtype = torch.complex128) -> "CovarianceState":
        return CovarianceState(torch.as_tensor(np.ascontiguousarray(self.phi_ss), dtype=dtype),
                               torch.as_tensor(np.ascontiguousarray(self.phi_nn_inv), dtype=dtype))


def frame_outer_products(bins: np.ndarray) -> np.ndarray:
    """Per-bin v v^H for spectrogram bins [M, T, F], returned as [T, F, M, M]."""
    v = np.moveaxis(bins, 0, -1)
    return v[..., :, np.newaxis] * v[..., np.newaxis, :].conj()


def diagonal_load(phi: np.ndarray) -> np.ndarray:
    """Adds max(1e-6 trace / M, 1e-10) to the diagonal of every [.., M, M] matrix."""
    num_mics = phi.shape[-1]
    trace = np.real(np.trace(phi, axis1=-2, axis2=-1))
    eps = np.maximum(LOADING_FACTOR * trace / num_mics, LOADING_FLOOR)
    return phi + eps[..., np.newaxis, np.newaxis] * np.eye(num_mics)


def loaded_inverse(phi: np.ndarray) -> np.ndarray:
    """(phi + eps I)^-1 by a batched solve, re-symmetrised to exact Hermitian form."""
    loaded = diagonal_load(phi)
    identity = np.broadcast_to(np.eye(phi.shape[-1], dtype=loaded.dtype), loaded.shape)
    inv = np.linalg.solve(loaded, identity)
    return 0.5 * (inv + np.swapaxes(inv, -1, -2).conj())


def _finish(phi_ss: np.ndarray, phi_nn: np.ndarray) -> CovarianceState:
    return CovarianceState(phi_ss=diagonal_load(phi_ss), phi_nn_inv=loaded_inverse(phi_nn))


def fixed_estimate(est: EnhancerOutput) -> CovarianceState:
    """
    Scene-wide average of v v^H for the speech and noise estimates. Acausal:
    every frame of the scene contributes.

    Returns:
        Time-invariant CovarianceState [F, M, M].
    """
    if est.speech_est.num_frames == 0:
        raise ValueError("fixed_estimate needs at least one frame")
    phi_ss = frame_outer_products(est.speech_est.bins).mean(axis=0)
    phi_nn = frame_outer_products(est.noise_est.bins).mean(axis=0)
    return _finish(phi_ss, phi_nn)


def _window_average(outer: np.ndarray, buffer_frames: int) -> np.ndarray:
    # Each window is summed on its own; differences of running totals lose the
    # quiet frames after loud ones.
    window = np.empty_like(outer)
    window[:buffer_frames - 1] = np.cumsum(outer[:buffer_frames - 1], axis=0)
    full = np.lib.stride_tricks.sliding_window_view(outer, buffer_frames, axis=0)
    window[buffer_frames - 1:] = full.sum(axis=-1)
    counts = np.minimum(np.arange(1, outer.shape[0] + 1), buffer_frames)
    return window / counts[:, np.newaxis, np.newaxis, np.newaxis]


def buffered_estimate(est: EnhancerOutput, buffer_frames: int) -> CovarianceState:
    """
    Causal sliding-window estimate: frame t averages frames max(0, t - B + 1)..t.

    Returns:
        CovarianceState stream [T, F, M, M].
    """
    num_frames = est.speech_est.num_frames
    if num_frames == 0:
        raise ValueError("buffered_estimate needs at least one frame")
    if buffer_frames < 1:
        raise ValueError(f"buffer must hold at least one frame, got {buffer_frames}")
    buffer_frames = min(buffer_frames, num_frames)
    phi_ss = _window_average(frame_outer_products(est.speech_est.bins), buffer_frames)
    phi_nn = _window_average(frame_outer_products(est.noise_est.bins), buffer_frames)
    return _finish(phi_ss, phi_nn)
