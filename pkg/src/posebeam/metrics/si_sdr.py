import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ..models.signals import Waveform

logger = logging.getLogger(__name__)

SI_SDR_CAP_DB = 60.0
# Error energy floor relative to the projection energy: 10 log10(1 / 1e-6) = 60 dB.
_ERROR_FLOOR = 10.0 ** (-SI_SDR_CAP_DB / 10.0)
# Added to both energies so a silent estimate scores 0 dB instead of 0/0.
SI_SDR_EPS = 1e-20


class ZeroReferenceError(ValueError):
    def __init__(self):
        super().__init__("SI-SDR reference signal is all zeros")


def _as_vector(x) -> np.ndarray:
    if isinstance(x, Waveform):
        if x.num_channels != 1:
            raise ValueError(f"SI-SDR expects single-channel signals, got {x.num_channels} channels")
        x = x.samples[0]
    return np.asarray(x, dtype=np.float64)


def si_sdr(estimate, reference) -> float:
    """
    Scale-invariant SDR in dB, capped at +60 dB.

    Both inputs are truncated to their common length. The reference is scaled
    to its projection of the estimate; the rest of the estimate is distortion.
    An all-zero estimate scores 0 dB.

    Raises:
        ZeroReferenceError: the reference has no energy.
    """
    est = _as_vector(estimate)
    ref = _as_vector(reference)
    length = min(est.shape[-1], ref.shape[-1])
    est, ref = est[..., :length], ref[..., :length]

    reference_energy = np.sum(ref ** 2)
    if reference_energy == 0:
        raise ZeroReferenceError()
    scaling = np.sum(ref * est) / reference_energy
    projection = scaling * ref
    noise = est - projection
    projection_energy = np.sum(projection ** 2)
    noise_energy = max(np.sum(noise ** 2), projection_energy * _ERROR_FLOOR)
    return float(10.0 * np.log10((projection_energy + SI_SDR_EPS) / (noise_energy + SI_SDR_EPS)))


def neg_si_sdr_loss(estimate: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    """
    Differentiable negative SI-SDR, averaged over leading axes.

    Args:
        estimate: [..., N].
        reference: [..., N], same shape.

    Returns:
        Scalar loss; -60 for a perfect estimate.
    """
    if estimate.shape != reference.shape:
        raise ValueError(f"estimate {tuple(estimate.shape)} and reference {tuple(reference.shape)} differ")
    reference_energy = (reference ** 2).sum(dim=-1, keepdim=True)
    if bool((reference_energy == 0).any()):
        raise ZeroReferenceError()
    scaling = (reference * estimate).sum(dim=-1, keepdim=True) / reference_energy
    projection = scaling * reference
    noise = estimate - projection
    projection_energy = (projection ** 2).sum(dim=-1)
    noise_energy = torch.maximum((noise ** 2).sum(dim=-1), projection_energy * _ERROR_FLOOR)
    return -(10.0 * torch.log10((projection_energy + SI_SDR_EPS) / (noise_energy + SI_SDR_EPS))).mean()


@dataclass
class MetricReport:
    """Per-scene SI-SDR values for one pipeline configuration."""
    enhancer: str
    estimator: str
    values_db: dict[str, float] = field(default_factory=dict)
    config_hash: str = ""

    def add(self, scene_id: str, value_db: float) -> None:
        self.values_db[scene_id] = float(value_db)

    @property
    def num_scenes(self) -> int:
        return len(self.values_db)

    @property
    def mean_db(self) -> float:
        """Mean over scenes with a defined value; nan for an empty report."""
        values = np.array([v for v in self.values_db.values() if not math.isnan(v)])
        if values.size == 0:
            return math.nan
        return float(values.mean())

    def merge(self, other: "MetricReport") -> "MetricReport":
        merged = MetricReport(self.enhancer, self.estimator, dict(self.values_db), self.config_hash)
        merged.values_db.update(other.values_db)
        return merged

    def scene_rows(self) -> list[dict]:
        return [{"scene_id": scene_id, "enhancer": self.enhancer, "estimator": self.estimator,
                 "si_sdr_db": value, "config_hash": self.config_hash}
                for scene_id, value in sorted(self.values_db.items())]

    def summary_row(self) -> dict:
        return {"enhancer": self.enhancer, "estimator": self.estimator, "num_scenes": self.num_scenes,
                "si_sdr_db": self.mean_db, "config_hash": self.config_hash}
