"""
Enhancer -> speech/noise covariance estimators -> MVDR, for one scene at a time.
"""
import logging
import typing as t
from dataclasses import dataclass

import numpy as np
import torch

from ..audio.stft import istft, stft
from ..autodiff.ops import complex_dtype_for
from ..autodiff.params import ModelParams
from ..beamforming.mvdr import apply_beamformer, condition_numbers, mvdr_weights, steer
from ..enhancement.lstm_mask import build_mask_net, lstm_mask
from ..enhancement.masks import EnhancerOutput, apply_mask, irm_enhance, oracle_split
from ..estimation.classical import CovarianceState, buffered_estimate, fixed_estimate
from ..estimation.learned import StreamingEstimator, build_estimator_pair, run_estimator
from ..metrics.si_sdr import MetricReport, si_sdr
from ..models.config import ConfigError, PipelineConfig
from ..models.signals import Spectrogram, Waveform
from ..simulation.scene import REFERENCE_MIC, SceneBundle
from ..utils.models import WeightsNotAvailableError

logger = logging.getLogger(__name__)

REFERENCE_ROW = ("unprocessed", "reference-mic")


@dataclass
class PipelineModels:
    """Loaded networks for one pipeline configuration; None where the stage is not learned."""
    estimator: ModelParams | None = None
    enhancer: ModelParams | None = None

    def digests(self) -> dict[str, str]:
        return {name: params.digest() for name, params in (("estimator", self.estimator),
                                                            ("enhancer", self.enhancer)) if params is not None}


class PipelineResult(t.NamedTuple):
    enhanced: Waveform
    report: MetricReport
    diagnostics: dict


def load_models(cfg: PipelineConfig, num_mics: int) -> PipelineModels:
    """
    Builds and loads the networks ``cfg`` selects.

    Raises:
        WeightsNotAvailableError: a learned stage has no weights path, or the file is missing,
            corrupt or built for another architecture.
    """
    models = PipelineModels()
    real_dtype = torch.float64 if cfg.precision == "float64" else torch.float32
    if cfg.is_learned:
        if not cfg.weights:
            raise WeightsNotAvailableError("<unset>", f"estimator '{cfg.estimator}' needs pipeline.weights")
        params = build_estimator_pair(num_mics, cfg.estimator, cfg.hidden_size, cfg.num_layers, cfg.f_info,
                                      cfg.f_info_channels, cfg.rank1_init)
        params.module.to(real_dtype)
        params.load(cfg.weights)
        params.module.eval()
        models.estimator = params
    if cfg.uses_lstm_enhancer:
        if not cfg.enhancer_weights:
            raise WeightsNotAvailableError("<unset>", f"enhancer '{cfg.enhancer}' needs pipeline.enhancer-weights")
        params = build_mask_net(cfg.enhancer, cfg.stft.num_bins, cfg.enhancer_hidden)
        params.module.to(real_dtype)
        params.load(cfg.enhancer_weights)
        params.module.eval()
        models.enhancer = params
    return models


def enhance(scene: SceneBundle, cfg: PipelineConfig, models: PipelineModels | None = None) -> EnhancerOutput:
    """Speech and noise estimates for every microphone."""
    config = cfg.stft
    if cfg.enhancer == "oracle":
        return oracle_split(scene, config)
    if cfg.enhancer in ("echoic_irm", "anechoic_irm"):
        return irm_enhance(scene, config, reference=cfg.enhancer.split("_")[0], kind=cfg.irm_kind)
    return mask_enhance(stft(scene.mixture, config), models)


def mask_enhance(mixture: Spectrogram, models: PipelineModels | None) -> EnhancerOutput:
    if models is None or models.enhancer is None:
        raise WeightsNotAvailableError("<unset>", "LSTM enhancer weights are not loaded")
    mask = lstm_mask(mixture.channel(REFERENCE_MIC), models.enhancer.module)
    return apply_mask(mask, mixture)


def estimate_covariances(est: EnhancerOutput, cfg: PipelineConfig,
                         models: PipelineModels | None = None) -> CovarianceState:
    if cfg.estimator == "fixed":
        return fixed_estimate(est)
    if cfg.estimator == "buffer":
        return buffered_estimate(est, cfg.buffer_frames)
    if cfg.is_learned:
        if models is None or models.estimator is None:
            raise WeightsNotAvailableError("<unset>", f"estimator '{cfg.estimator}' weights are not loaded")
        return run_estimator(est, models.estimator.module, complex_dtype_for(cfg.precision))
    raise ConfigError("pipeline.estimator", f"'{cfg.estimator}' does not estimate covariances")


def streaming_covariances(est: EnhancerOutput, models: PipelineModels, cfg: PipelineConfig) -> CovarianceState:
    """Frame-by-frame twin of :func:`estimate_covariances` for learned estimators."""
    dtype = complex_dtype_for(cfg.precision)
    pair = models.estimator.module
    speech_stream = StreamingEstimator(pair.speech, est.speech_est.num_bins)
    noise_stream = StreamingEstimator(pair.noise, est.noise_est.num_bins)
    speech = torch.as_tensor(est.speech_est.bins, dtype=dtype)
    noise = torch.as_tensor(est.noise_est.bins, dtype=dtype)
    phi_ss = torch.stack([speech_stream.step(speech[:, t]) for t in range(speech.shape[1])])
    phi_nn_inv = torch.stack([noise_stream.step(noise[:, t]) for t in range(noise.shape[1])])
    return CovarianceState(phi_ss, phi_nn_inv)


def _summarise_conditions(cond: torch.Tensor) -> dict:
    """Per-frame median and maximum condition number of [T, F] (or [F]) values."""
    if cond.dim() == 1:
        cond = cond.unsqueeze(0)
    finite = torch.where(torch.isfinite(cond), cond, torch.full_like(cond, float("nan")))
    return {
        "median-per-frame": torch.nanmedian(finite, dim=-1).values.tolist(),
        "max-per-frame": cond.max(dim=-1).values.tolist(),
        "singular-bins": int((~torch.isfinite(cond)).sum()),
    }


def beamform_scene(mixture: Spectrogram, state: CovarianceState, cfg: PipelineConfig) -> tuple[Spectrogram, dict]:
    """
    Steers on phi_ss, builds MVDR weights from phi_nn^-1 and filters the mixture.

    Returns:
        The single-channel output spectrogram and diagnostics: stabiliser and
        steering-fallback counts, and condition summaries of phi_nn^-1.
    """
    if not isinstance(state.phi_ss, torch.Tensor):
        state = state.to_torch(torch.complex128)
    steering = steer(state.phi_ss, cfg.steering_mode)
    weights = mvdr_weights(state.phi_nn_inv, steering.vectors)
    diagnostics = {
        "steering": cfg.steering_mode,
        "stabilized-bins": weights.num_stabilized,
        "stabilized-per-frame": _per_frame_counts(weights.stabilized),
        "steering-fallbacks": int(steering.fallback.sum()),
        "noise-inverse-condition": _summarise_conditions(condition_numbers(state.phi_nn_inv)),
    }
    if weights.num_stabilized:
        logger.warning(f"MVDR stabiliser active in {weights.num_stabilized} bin(s)")
    return apply_beamformer(weights.weights.detach(), mixture), diagnostics


def _per_frame_counts(flags: torch.Tensor) -> list[int]:
    if flags.dim() == 1:
        flags = flags.unsqueeze(0)
    return flags.sum(dim=-1).tolist()


def reference_si_sdr(scene: SceneBundle) -> float:
    """SI-SDR of the unprocessed reference microphone."""
    return si_sdr(scene.mixture.channel(REFERENCE_MIC), scene.reference())


def run_pipeline(scene: SceneBundle, cfg: PipelineConfig, models: PipelineModels | None = None) -> PipelineResult:
    """
    Enhances one scene and scores it against the anechoic reference.

    With ``estimator == "none"`` the enhancer's reference-mic speech estimate is
    the output and nothing is beamformed.
    """
    if cfg.is_learned or cfg.uses_lstm_enhancer:
        models = models or load_models(cfg, scene.num_mics)
    est = enhance(scene, cfg, models)
    if cfg.estimator == "none":
        output = est.speech_est.channel(REFERENCE_MIC)
        diagnostics = {"steering": None, "stabilized-bins": 0, "steering-fallbacks": 0}
    else:
        mixture = stft(scene.mixture, cfg.stft)
        state = estimate_covariances(est, cfg, models)
        output, diagnostics = beamform_scene(mixture, state, cfg)

    enhanced = istft(output).truncated(scene.mixture.num_samples)
    report = MetricReport(cfg.enhancer, cfg.estimator, config_hash=cfg.config_hash())
    report.add(scene.scene_id, si_sdr(enhanced, scene.reference()))
    logger.debug(f"Scene {scene.scene_id}: {cfg.enhancer}/{cfg.estimator} "
                 f"{report.values_db[scene.scene_id]:.2f} dB")
    return PipelineResult(enhanced, report, diagnostics)


def enhance_waveform(mixture: Waveform, cfg: PipelineConfig, models: PipelineModels) -> tuple[Waveform, dict]:
    """
    Enhances a recording without ground truth: the LSTM mask enhancer, then the
    configured estimator run frame by frame.

    Raises:
        ConfigError: the enhancer needs clean references (IRM, oracle).
    """
    if not cfg.uses_lstm_enhancer:
        raise ConfigError("pipeline.enhancer", f"'{cfg.enhancer}' needs clean references; use lstm256 or lstm512")
    spec = stft(mixture, cfg.stft)
    est = mask_enhance(spec, models)
    if cfg.estimator == "none":
        output, diagnostics = est.speech_est.channel(REFERENCE_MIC), {}
    else:
        if cfg.is_learned:
            state = streaming_covariances(est, models, cfg)
        else:
            state = estimate_covariances(est, cfg, models)
        output, diagnostics = beamform_scene(spec, state, cfg)
    return istft(output).truncated(mixture.num_samples), diagnostics


def kill_microphone(scene: SceneBundle, rng: np.random.Generator) -> tuple[SceneBundle, int]:
    """
    Replaces one random microphone with white noise at the mixture RMS level.

    The speech image of that microphone becomes zero and its noise becomes the
    white noise, so mixture = speech + noise still holds.
    """
    mic = int(rng.integers(scene.num_mics))
    mixture = scene.mixture.samples.copy()
    speech = scene.speech_echoic.samples.copy()
    noise = scene.noise.samples.copy()
    rms = float(np.sqrt(np.mean(mixture.astype(np.float64) ** 2)))
    white = (rng.standard_normal(mixture.shape[1]) * rms).astype(mixture.dtype)
    mixture[mic] = white
    speech[mic] = 0.0
    noise[mic] = white
    rate = scene.sample_rate_hz
    return SceneBundle(mixture=Waveform(mixture, rate), speech_echoic=Waveform(speech, rate),
                       speech_anechoic=scene.speech_anechoic, noise=Waveform(noise, rate),
                       trajectory=scene.trajectory, snr_db=scene.snr_db, scene_id=scene.scene_id,
                       metadata=dict(scene.metadata, **{"dead-mic": mic})), mic
