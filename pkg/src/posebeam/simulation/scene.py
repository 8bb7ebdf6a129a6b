import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..models.signals import Waveform
from .convolution import DEFAULT_CROSSFADE, crossfade_gains, time_varying_convolve
from .room import ArrayGeometry, RoomSpec, direct_path_delay, simulate_rirs
from .trajectory import PoseTrajectory

logger = logging.getLogger(__name__)

REFERENCE_MIC = 0
SNR_RANGE_DB = (-5.0, 5.0)


class UndefinedSnrError(ValueError):
    def __init__(self, which: str):
        self.which = which
        super().__init__(f"SNR is undefined: {which} is silent at the reference microphone")


@dataclass(frozen=True)
class SceneBundle:
    """
    One rendered scene with its ground truth.

    ``speech_anechoic`` is the dry speech delayed to the reference microphone's
    direct path; it is the evaluation and training reference.
    """
    mixture: Waveform
    speech_echoic: Waveform
    speech_anechoic: Waveform
    noise: Waveform
    trajectory: PoseTrajectory
    snr_db: float
    scene_id: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = {self.mixture.samples.shape, self.speech_echoic.samples.shape, self.noise.samples.shape}
        if len(shapes) != 1:
            raise ValueError(f"mixture, speech and noise shapes differ: {sorted(shapes)}")
        if self.speech_anechoic.num_channels != 1:
            raise ValueError("anechoic reference must be single-channel")

    @property
    def num_mics(self) -> int:
        return self.mixture.num_channels

    @property
    def sample_rate_hz(self) -> int:
        return self.mixture.sample_rate_hz

    def reference(self) -> Waveform:
        """Anechoic reference truncated to the mixture length."""
        return self.speech_anechoic.truncated(self.mixture.num_samples)

    def __repr__(self):
        return (f"<SceneBundle(id='{self.scene_id}', mics={self.num_mics}, samples={self.mixture.num_samples}, "
                f"snr_db={self.snr_db:.2f}, static={self.trajectory.is_static})>")


def _energy(w: Waveform, mic: int = REFERENCE_MIC) -> float:
    ref = w.samples[mic].astype(np.float64)
    return float(np.dot(ref, ref))


def noise_gain(speech: Waveform, noise: Waveform, snr_db: float) -> float:
    """Gain on ``noise`` giving ``snr_db`` at the reference microphone."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    speech_energy = _energy(speech)
    noise_energy = _energy(noise)
    if speech_energy == 0.0:
        raise UndefinedSnrError("speech")
    if noise_energy == 0.0:
        raise UndefinedSnrError("noise")
    return math.sqrt(speech_energy / (noise_energy * 10.0 ** (snr_db / 10.0)))


def mix_scene(speech: Waveform, noises: list[Waveform], snr_db: float, *,
              speech_anechoic: Waveform | None = None, trajectory: PoseTrajectory | None = None,
              scene_id: str = "") -> SceneBundle:
    """
    Sums the noise images, scales them to ``snr_db`` at the reference mic and mixes.

    All stored signals are float32 and the mixture is formed in float32, so
    mixture == speech_echoic + noise holds exactly, also after a float32 WAV
    round trip. ``snr_db`` lies in ``SNR_RANGE_DB``; ``snr_db = inf`` mixes in silence.

    Raises:
        UndefinedSnrError: speech or noise is silent at the reference mic.
        ValueError: ``snr_db`` is neither in range nor +inf.
    """
    if not (SNR_RANGE_DB[0] <= snr_db <= SNR_RANGE_DB[1] or snr_db == math.inf):
        raise ValueError(f"SNR {snr_db} dB is outside {SNR_RANGE_DB[0]:g}..{SNR_RANGE_DB[1]:g} dB")
    if not noises:
        raise ValueError("at least one noise signal is required")
    for i, n in enumerate(noises):
        if n.samples.shape != speech.samples.shape:
            raise ValueError(f"noise {i} has shape {n.samples.shape}, speech has {speech.samples.shape}")

    speech32 = speech.samples.astype(np.float32)
    noise_sum = Waveform(np.sum([n.samples for n in noises], axis=0), speech.sample_rate_hz)
    gain = noise_gain(Waveform(speech32, speech.sample_rate_hz), noise_sum, snr_db)
    noise32 = (gain * noise_sum.samples).astype(np.float32)
    mixture32 = speech32 + noise32

    if speech_anechoic is None:
        speech_anechoic = Waveform(speech32[REFERENCE_MIC:REFERENCE_MIC + 1], speech.sample_rate_hz)
    if trajectory is None:
        trajectory = PoseTrajectory.static(0.0, speech.duration_s)

    rate = speech.sample_rate_hz
    return SceneBundle(
        mixture=Waveform(mixture32, rate),
        speech_echoic=Waveform(speech32, rate),
        speech_anechoic=Waveform(speech_anechoic.samples.astype(np.float32), rate),
        noise=Waveform(noise32, rate),
        trajectory=trajectory,
        snr_db=float(snr_db),
        scene_id=scene_id,
    )


def realized_snr_db(scene: SceneBundle) -> float:
    return 10.0 * math.log10(_energy(scene.speech_echoic) / _energy(scene.noise))


def delay_signal(x: np.ndarray, delay: int, length: int) -> np.ndarray:
    out = np.zeros(length, dtype=np.float64)
    if delay < length:
        take = min(len(x), length - delay)
        out[delay:delay + take] = x[:take]
    return out


def moving_direct_path(dry: np.ndarray, delays: list[int], length: int,
                       crossfade: int = DEFAULT_CROSSFADE) -> np.ndarray:
    """
    Dry signal delayed by one direct-path delay per snapshot.

    Segments and ramps are the ones the time-varying convolution uses, so the
    reference follows the reference mic as the array turns.
    """
    if len(set(delays)) == 1:
        return delay_signal(dry, delays[0], length)
    gains = crossfade_gains(len(dry), len(delays), crossfade)
    return sum(delay_signal(gains[r] * dry, delay, length) for r, delay in enumerate(delays))


def render_scene(room: RoomSpec, geom: ArrayGeometry, trajectory: PoseTrajectory, speech_dry: Waveform,
                 noises_dry: list[Waveform], snr_db: float, *, crossfade: int = DEFAULT_CROSSFADE,
                 scene_id: str = "") -> SceneBundle:
    """
    Renders a scene: source 0 of ``room`` is the talker, sources 1.. the noises.

    Every source goes through a time-varying convolution with one impulse
    response per trajectory snapshot; outputs are cut back to the dry length.
    The anechoic reference uses the reference mic's direct-path delay at each
    snapshot.
    """
    if len(noises_dry) != len(room.source_positions_m) - 1:
        raise ValueError(f"room has {len(room.source_positions_m) - 1} noise positions, got {len(noises_dry)} noises")
    length = speech_dry.num_samples
    rate = speech_dry.sample_rate_hz

    def _spatialise(dry: Waveform, source_idx: int) -> Waveform:
        rirs = simulate_rirs(room, geom, trajectory.yaw_rad, source_idx, rate)
        return time_varying_convolve(dry, rirs, crossfade).truncated(length)

    speech_echoic = _spatialise(speech_dry, 0)
    noise_images = [_spatialise(n.truncated(length), i + 1) for i, n in enumerate(noises_dry)]

    delays = [direct_path_delay(room, geom, float(yaw), 0, REFERENCE_MIC, rate) for yaw in trajectory.yaw_rad]
    anechoic = Waveform(moving_direct_path(speech_dry.samples[0], delays, length, crossfade), rate)
    logger.debug(f"Scene {scene_id}: direct-path delay {min(delays)}..{max(delays)} samples, "
                 f"{len(noises_dry)} noise sources")
    return mix_scene(speech_echoic, noise_images, snr_db, speech_anechoic=anechoic,
                     trajectory=trajectory, scene_id=scene_id)
