"""
Spatialised dataset generation.

Every scene is a pure function of (config, scene seed): room, positions, pose
trajectory, source files and SNR are all drawn from the scene's own generator,
so scenes can be rendered in any order on any number of threads.
"""
import concurrent.futures
import logging
import math
import pathlib
import typing as t

import numpy as np

from ..audio.decode import list_audio_files, load_mono
from ..models.config import SimulationConfig, num_threads
from ..models.scene import SPLITS, Manifest, SceneRecord
from ..models.signals import Waveform
from .room import ArrayGeometry, RoomSpec
from .scene import render_scene
from .trajectory import PoseTrajectory, sample_trajectory

logger = logging.getLogger(__name__)

ProgressCallback = t.Callable[[int, int], None]

MIN_SOURCE_DISTANCE_M = 0.5
_PLACEMENT_ATTEMPTS = 1000


class InsufficientAudioError(RuntimeError):
    def __init__(self, split: str, kind: str, details: str = ""):
        self.split = split
        self.kind = kind
        super().__init__(f"Not enough {kind} audio for the {split} split" + (f": {details}" if details else ""))


def split_counts(n_scenes: int, fractions) -> dict[str, int]:
    """Floors each split's share; the remainder goes to the first split."""
    counts = [int(math.floor(n_scenes * f + 1e-9)) for f in fractions]
    counts[0] += n_scenes - sum(counts)
    return dict(zip(SPLITS, counts))


def partition_files(files: list[pathlib.Path], fractions, rng: np.random.Generator) -> dict[str, list[pathlib.Path]]:
    """Shuffles ``files`` and cuts them into disjoint per-split lists."""
    order = rng.permutation(len(files))
    shuffled = [files[i] for i in order]
    counts = split_counts(len(files), fractions)
    out, start = {}, 0
    for split in SPLITS:
        out[split] = shuffled[start:start + counts[split]]
        start += counts[split]
    return out


def fit_length(x: np.ndarray, num_samples: int) -> np.ndarray:
    """Trims or loops ``x`` to exactly num_samples."""
    if len(x) == 0:
        return np.zeros(num_samples)
    if len(x) >= num_samples:
        return x[:num_samples]
    return np.tile(x, -(-num_samples // len(x)))[:num_samples]


def synthetic_speech(rng: np.random.Generator, num_samples: int, sample_rate_hz: int) -> np.ndarray:
    """Voiced harmonic syllables with pitch drift, separated by pauses."""
    t_axis = np.arange(num_samples) / sample_rate_hz
    f0_base = rng.uniform(90.0, 250.0)
    f0 = f0_base * (1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 3.0) * t_axis + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate_hz
    num_harmonics = int(4000.0 // (f0_base * 1.1))
    voiced = sum(np.sin(k * phase) / k for k in range(1, num_harmonics + 1))

    envelope = np.zeros(num_samples)
    pos = int(rng.uniform(0.0, 0.2) * sample_rate_hz)
    while pos < num_samples:
        length = int(rng.uniform(0.12, 0.32) * sample_rate_hz)
        stop = min(pos + length, num_samples)
        envelope[pos:stop] = np.hanning(length)[:stop - pos] * rng.uniform(0.4, 1.0)
        pos = stop + int(rng.uniform(0.04, 0.4) * sample_rate_hz)

    fricative = rng.standard_normal(num_samples) * 0.05
    out = envelope * (voiced + fricative)
    return 0.5 * out / max(np.max(np.abs(out)), 1e-12)


def synthetic_noise(rng: np.random.Generator, num_samples: int, sample_rate_hz: int) -> np.ndarray:
    """Coloured noise with a random 1/f^a slope, sometimes with a hum."""
    spectrum = np.fft.rfft(rng.standard_normal(num_samples))
    freqs = np.fft.rfftfreq(num_samples, 1.0 / sample_rate_hz)
    slope = rng.uniform(0.0, 2.0)
    spectrum *= 1.0 / np.maximum(freqs, 20.0) ** (slope / 2.0)
    noise = np.fft.irfft(spectrum, n=num_samples)
    if rng.random() < 0.3:
        hum = rng.choice([50.0, 60.0, 120.0])
        noise += 0.5 * np.std(noise) * np.sin(2 * np.pi * hum * np.arange(num_samples) / sample_rate_hz)
    return 0.1 * noise / max(np.std(noise), 1e-12)


def _uniform_point(rng: np.random.Generator, dims: np.ndarray, margin: float) -> np.ndarray:
    return rng.uniform(margin, dims - margin)


def sample_room(config: SimulationConfig, rng: np.random.Generator, num_noises: int) -> RoomSpec:
    """Draws a room, an array centre and talker/noise positions away from the array."""
    dims = rng.uniform(*config.dims_range_m, size=3)
    t60 = float(rng.uniform(*config.t60_range_s))
    margin = config.wall_margin_m
    center = _uniform_point(rng, dims, margin)
    sources = []
    for _ in range(1 + num_noises):
        for _attempt in range(_PLACEMENT_ATTEMPTS):
            candidate = _uniform_point(rng, dims, margin)
            if np.linalg.norm(candidate - center) >= MIN_SOURCE_DISTANCE_M:
                break
        sources.append(tuple(candidate))
    return RoomSpec(dims_m=tuple(dims), t60_s=t60, source_positions_m=tuple(sources),
                    array_center_m=tuple(center), max_order=config.max_order)


class _SourcePool:
    def __init__(self, files: list[pathlib.Path] | None, kind: str, split: str, config: SimulationConfig):
        self.files = files
        self.kind = kind
        self.split = split
        self.config = config

    def draw(self, rng: np.random.Generator) -> tuple[np.ndarray, str]:
        n = self.config.num_samples
        if self.files is None:
            maker = synthetic_speech if self.kind == "speech" else synthetic_noise
            return maker(rng, n, self.config.sample_rate_hz), f"synthetic:{self.kind}"
        if not self.files:
            raise InsufficientAudioError(self.split, self.kind, "no files assigned to this split")
        path = self.files[int(rng.integers(len(self.files)))]
        w = load_mono(path, self.config.sample_rate_hz)
        return fit_length(w.samples[0], n), str(path)


def _render_one(config: SimulationConfig, out_dir: pathlib.Path, scene_id: str, split: str,
                seed_seq: np.random.SeedSequence, speech_pool: _SourcePool, noise_pool: _SourcePool) -> SceneRecord:
    rng = np.random.default_rng(seed_seq)
    scene_seed = int(seed_seq.generate_state(1, dtype=np.uint32)[0])
    lo, hi = config.noise_sources_range
    num_noises = int(rng.integers(lo, hi + 1))
    room = sample_room(config, rng, num_noises)
    geom = ArrayGeometry.circular(config.num_mics, config.array_diameter_m)

    if config.dynamic:
        trajectory = sample_trajectory(config.pose_model, config.scene_duration_s, config.num_snapshots,
                                       rng_seed=int(rng.integers(2 ** 63)))
    else:
        trajectory = PoseTrajectory.static(float(rng.uniform(0.0, 2 * np.pi)), config.scene_duration_s)

    speech, speech_file = speech_pool.draw(rng)
    noises, noise_files = [], []
    for _ in range(num_noises):
        noise, noise_file = noise_pool.draw(rng)
        noises.append(Waveform(noise[np.newaxis], config.sample_rate_hz))
        noise_files.append(noise_file)
    snr_db = float(rng.uniform(*config.snr_range_db))

    bundle = render_scene(room, geom, trajectory, Waveform(speech[np.newaxis], config.sample_rate_hz), noises,
                          snr_db, crossfade=config.crossfade, scene_id=scene_id)
    return SceneRecord.save_bundle(bundle, split=split, seed=scene_seed, room=room, out_dir=out_dir,
                                   speech_files=[speech_file], noise_files=noise_files)


def generate_dataset(config: SimulationConfig, out_dir, n_scenes: int, split_seed: int, *,
                     synthetic: bool = False, progress_cb: ProgressCallback | None = None,
                     max_workers: int | None = None) -> Manifest:
    """
    Renders ``n_scenes`` scenes into ``out_dir`` and writes ``out_dir/manifest.json``.

    Source files are partitioned into disjoint train/val/test pools before any
    scene is drawn; scene seeds come from one SeedSequence, so the same config
    and seed reproduce the same manifest.

    Raises:
        InsufficientAudioError: a split with scenes has no speech or noise files.
    """
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root_seq = np.random.SeedSequence(split_seed)
    partition_seq, *scene_seqs = root_seq.spawn(n_scenes + 1)
    counts = split_counts(n_scenes, config.split_fractions)

    pools: dict[str, tuple[_SourcePool, _SourcePool]] = {}
    if synthetic or (config.speech_dir is None and config.noise_dir is None):
        for split in SPLITS:
            pools[split] = (_SourcePool(None, "speech", split, config), _SourcePool(None, "noise", split, config))
    else:
        partition_rng = np.random.default_rng(partition_seq)
        speech_files = list_audio_files(config.speech_dir) if config.speech_dir else []
        noise_files = list_audio_files(config.noise_dir) if config.noise_dir else []
        speech_parts = partition_files(speech_files, config.split_fractions, partition_rng)
        noise_parts = partition_files(noise_files, config.split_fractions, partition_rng)
        for split in SPLITS:
            if counts[split] and not speech_parts[split]:
                raise InsufficientAudioError(split, "speech", f"{len(speech_files)} files in {config.speech_dir}")
            if counts[split] and not noise_parts[split]:
                raise InsufficientAudioError(split, "noise", f"{len(noise_files)} files in {config.noise_dir}")
            pools[split] = (_SourcePool(speech_parts[split], "speech", split, config),
                            _SourcePool(noise_parts[split], "noise", split, config))

    jobs = []
    index = 0
    for split in SPLITS:
        for _ in range(counts[split]):
            jobs.append((f"{split}-{index:05d}", split, scene_seqs[index]))
            index += 1

    logger.info(f"Generating {n_scenes} {'dynamic' if config.dynamic else 'static'} scenes into {out_dir} "
                f"({', '.join(f'{s}={c}' for s, c in counts.items())})")
    records: list[SceneRecord] = [None] * len(jobs)  # type: ignore[list-item]
    workers = max_workers or num_threads()
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {
            pool.submit(_render_one, config, out_dir, scene_id, split, seq, *pools[split]): i
            for i, (scene_id, split, seq) in enumerate(jobs)
        }
        for done, future in enumerate(concurrent.futures.as_completed(futures), start=1):
            records[futures[future]] = future.result()
            logger.info(f"Scene {done}/{len(jobs)} rendered ({records[futures[future]].scene_id})")
            if progress_cb:
                progress_cb(done, len(jobs))

    settings = config.to_dict()
    settings.update({"split-seed": split_seed, "n-scenes": n_scenes, "synthetic": bool(synthetic)})
    manifest = Manifest(records=records, settings=settings, path=out_dir / "manifest.json")
    manifest.save()
    return manifest
