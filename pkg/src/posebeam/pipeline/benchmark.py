"""
Real-time factor and analytic cost of the streaming pipeline.

The timed loop runs frame by frame exactly as a live system would: STFT frame
in, (optional) mask network step, one recurrent step per estimator, MVDR,
one output frame out.
"""
import logging
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from ..audio.stft import stft
from ..autodiff.ops import complex_dtype_for, real_dtype_for
from ..beamforming.mvdr import beamform, mvdr_weights, steer
from ..enhancement.lstm_mask import build_mask_net
from ..estimation.learned import (StreamingEstimator, build_estimator_pair, estimator_flops_per_frame,
                                  mvdr_flops_per_frame)
from ..models.config import ConfigError, PipelineConfig
from ..models.signals import Waveform

logger = logging.getLogger(__name__)


@dataclass
class BenchmarkReport:
    num_mics: int
    num_bins: int
    num_frames: int
    audio_s: float
    processing_s: float
    rtf: float
    ms_per_frame: float
    flops_per_frame_estimator: int
    flops_per_frame_total: int
    parameters_per_estimator: int
    parameters_total: int
    storage_mb: float

    def to_dict(self) -> dict:
        return {k.replace("_", "-"): v for k, v in asdict(self).items()}


def benchmark(cfg: PipelineConfig, num_mics: int = 6, duration_s: float = 5.0, sample_rate_hz: int = 16000,
              seed: int = 0) -> BenchmarkReport:
    """
    Times streaming inference of the configured learned estimator on random
    audio. Uses the configured weights when set, random weights otherwise.

    Raises:
        ConfigError: the estimator is not learned.
    """
    if not cfg.is_learned:
        raise ConfigError("pipeline.estimator", f"bench needs a learned estimator, got '{cfg.estimator}'")
    real_dtype = real_dtype_for(cfg.precision)
    complex_dtype = complex_dtype_for(cfg.precision)
    params = build_estimator_pair(num_mics, cfg.estimator, cfg.hidden_size, cfg.num_layers, cfg.f_info,
                                  cfg.f_info_channels, cfg.rank1_init, seed=seed)
    params.module.to(real_dtype)
    if cfg.weights:
        params.load(cfg.weights)
    pair = params.module.eval()

    rng = np.random.default_rng(seed)
    audio = Waveform(rng.standard_normal((num_mics, int(duration_s * sample_rate_hz))), sample_rate_hz)
    spec = torch.as_tensor(stft(audio, cfg.stft).bins, dtype=complex_dtype)
    num_frames, num_bins = spec.shape[1], spec.shape[2]

    mask_net = None
    if cfg.uses_lstm_enhancer:
        mask_params = build_mask_net(cfg.enhancer, num_bins, cfg.enhancer_hidden)
        mask_params.module.to(real_dtype)
        if cfg.enhancer_weights:
            mask_params.load(cfg.enhancer_weights)
        mask_net = mask_params.module.eval()
    fixed_mask = torch.as_tensor(rng.uniform(size=(num_frames, num_bins)), dtype=real_dtype)

    speech_stream = StreamingEstimator(pair.speech, num_bins)
    noise_stream = StreamingEstimator(pair.noise, num_bins)
    mask_state = None
    started = time.perf_counter()
    with torch.no_grad():
        for t in range(num_frames):
            frame = spec[:, t]
            if mask_net is not None:
                hidden, mask_state = mask_net.lstm(mask_net.features(frame[0]).view(1, 1, -1).to(real_dtype),
                                                   mask_state)
                mask = torch.sigmoid(mask_net.head(hidden))[0, 0]
            else:
                mask = fixed_mask[t]
            speech = mask * frame
            phi_ss = speech_stream.step(speech)
            phi_nn_inv = noise_stream.step(frame - speech)
            v = steer(phi_ss, cfg.steering_mode).vectors
            weights = mvdr_weights(phi_nn_inv, v).weights
            beamform(weights, frame.unsqueeze(1))
    elapsed = time.perf_counter() - started

    per_estimator = estimator_flops_per_frame(pair.speech, num_bins)
    report = BenchmarkReport(
        num_mics=num_mics, num_bins=num_bins, num_frames=num_frames, audio_s=audio.duration_s,
        processing_s=elapsed, rtf=elapsed / audio.duration_s, ms_per_frame=1e3 * elapsed / max(num_frames, 1),
        flops_per_frame_estimator=per_estimator,
        flops_per_frame_total=2 * per_estimator + mvdr_flops_per_frame(num_mics, num_bins),
        parameters_per_estimator=sum(p.numel() for p in pair.speech.parameters()),
        parameters_total=params.parameter_count(), storage_mb=params.storage_mb())
    logger.info(f"RTF {report.rtf:.3f} ({report.ms_per_frame:.2f} ms/frame), "
                f"{report.flops_per_frame_estimator / 1e6:.1f} MFLOP/frame per estimator")
    return report
