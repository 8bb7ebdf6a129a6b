"""
End-to-end training of the covariance estimators, the mask enhancer, or both,
with the SI-SDR of the beamformer output as the objective.

Layout of a training directory:

    estimator.pbw / .json    best estimator pair (validation SI-SDR)
    enhancer.pbw / .json     best mask network, when it is trained
    checkpoint.pbw / .json   last epoch: parameters, Adam state, early-stopping counters
    training-log.json        per-epoch history
"""
import json
import logging
import math
import pathlib
import threading
import time
import typing as t
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from ..audio.stft import stft
from ..autodiff.optim import AdamState, NumericFailureError, adam_step, backward
from ..autodiff.params import ModelParams
from ..enhancement.lstm_mask import build_mask_net
from ..estimation.learned import build_estimator_pair
from ..models.config import ConfigError, PipelineConfig, TrainConfig
from ..models.scene import Manifest, SceneRecord
from ..utils.io import atomic_write_json
from ..utils.models import ensure_loaded, write_weights
from .graph import GraphBatch, per_scene_si_sdr, pipeline_loss
from .pipeline import PipelineModels, enhance, load_models

logger = logging.getLogger(__name__)

ESTIMATOR_FILE = "estimator.pbw"
ENHANCER_FILE = "enhancer.pbw"
CHECKPOINT_FILE = "checkpoint.pbw"
LOG_FILE = "training-log.json"

EpochCallback = t.Callable[[int, int, dict], None]
# epoch, max_epochs, log entry


@dataclass
class PreparedScene:
    scene_id: str
    mixture: np.ndarray
    reference: np.ndarray
    speech: np.ndarray | None = None
    noise: np.ndarray | None = None


@dataclass
class TrainingResult:
    out_dir: pathlib.Path
    history: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_si_sdr_db: float = -math.inf
    stopped: str = "max-epochs"

    @property
    def estimator_path(self) -> pathlib.Path:
        return self.out_dir / ESTIMATOR_FILE

    @property
    def enhancer_path(self) -> pathlib.Path:
        return self.out_dir / ENHANCER_FILE

    @property
    def log_path(self) -> pathlib.Path:
        return self.out_dir / LOG_FILE


def _check_target(cfg: TrainConfig, pipeline: PipelineConfig) -> None:
    if cfg.target in ("estimator", "joint") and not pipeline.is_learned:
        raise ConfigError("pipeline.estimator", f"training target '{cfg.target}' needs a learned estimator, "
                                                f"got '{pipeline.estimator}'")
    if cfg.target in ("enhancer", "joint") and not pipeline.uses_lstm_enhancer:
        raise ConfigError("pipeline.enhancer", f"training target '{cfg.target}' needs an LSTM enhancer, "
                                               f"got '{pipeline.enhancer}'")


def prepare_scenes(records: list[SceneRecord], pipeline: PipelineConfig, frozen: PipelineModels | None,
                   *, precompute_estimates: bool) -> list[PreparedScene]:
    """Loads scenes and computes everything the trained parameters do not influence."""
    prepared = []
    for record in records:
        bundle = record.load_bundle()
        item = PreparedScene(scene_id=bundle.scene_id,
                             mixture=stft(bundle.mixture, pipeline.stft).bins,
                             reference=bundle.reference().samples[0].astype(np.float64))
        if precompute_estimates:
            est = enhance(bundle, pipeline, frozen)
            item.speech, item.noise = est.speech_est.bins, est.noise_est.bins
        prepared.append(item)
    return prepared


def collate(scenes: list[PreparedScene], precision: str) -> GraphBatch:
    complex_dtype = torch.complex128 if precision == "float64" else torch.complex64
    real_dtype = torch.float64 if precision == "float64" else torch.float32
    if len({s.reference.shape for s in scenes}) != 1 or len({s.mixture.shape for s in scenes}) != 1:
        raise ValueError("scenes in one batch must share duration and channel count")

    def stack(arrays, dtype):
        return torch.as_tensor(np.stack(arrays), dtype=dtype)

    batch = GraphBatch(mixture=stack([s.mixture for s in scenes], complex_dtype),
                       reference=stack([s.reference for s in scenes], real_dtype))
    if scenes[0].speech is not None:
        batch.speech = stack([s.speech for s in scenes], complex_dtype)
        batch.noise = stack([s.noise for s in scenes], complex_dtype)
    return batch


class Trainer:
    """
    Owns the trainable modules, their Adam state and the early-stopping counters
    for one training directory.
    """

    def __init__(self, cfg: TrainConfig, pipeline: PipelineConfig, num_mics: int, out_dir):
        _check_target(cfg, pipeline)
        self.cfg = cfg
        self.pipeline = pipeline
        self.out_dir = pathlib.Path(out_dir)
        real_dtype = torch.float64 if pipeline.precision == "float64" else torch.float32

        torch.manual_seed(cfg.seed)
        modules = nn.ModuleDict()
        architecture = {"kind": "training-checkpoint", "target": cfg.target}
        self.estimator: ModelParams | None = None
        self.enhancer: ModelParams | None = None
        if cfg.target in ("estimator", "joint"):
            self.estimator = build_estimator_pair(num_mics, pipeline.estimator, pipeline.hidden_size,
                                                  pipeline.num_layers, pipeline.f_info, pipeline.f_info_channels,
                                                  pipeline.rank1_init)
            modules["estimator"] = self.estimator.module
            architecture["estimator"] = self.estimator.architecture
        if cfg.target in ("enhancer", "joint"):
            self.enhancer = build_mask_net(pipeline.enhancer, pipeline.stft.num_bins, pipeline.enhancer_hidden)
            modules["enhancer"] = self.enhancer.module
            architecture["enhancer"] = self.enhancer.architecture
        modules.to(real_dtype)
        self.params = ModelParams(modules, architecture)
        self.adam = AdamState(self.params, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps,
                              clip_norm=cfg.clip_norm)

        self.epoch = 0
        self.bad_epochs = 0
        self.best_val = -math.inf
        self.best_epoch: int | None = None
        self.best_entries: dict[str, np.ndarray] | None = None
        self.history: list[dict] = []
        logger.info(f"Trainer for target '{cfg.target}': {self.params.parameter_count()} trainable parameters")

    @property
    def precompute_estimates(self) -> bool:
        return self.enhancer is None

    def _graph_kwargs(self) -> dict:
        kwargs = {"steering": self.pipeline.steering_mode}
        if self.estimator is not None:
            kwargs["estimator"] = self.estimator.module
        if self.enhancer is not None:
            kwargs["mask_net"] = self.enhancer.module
        return kwargs

    def train_step(self, batch: GraphBatch, step: int) -> tuple[float, float]:
        """One Adam update on one batch. Returns (loss, gradient norm)."""
        self.params.zero_grad()
        loss = pipeline_loss(batch, self.pipeline.stft, **self._graph_kwargs())
        if not torch.isfinite(loss):
            raise NumericFailureError("non-finite loss", epoch=self.epoch, step=step)
        backward(loss)
        try:
            norm = adam_step(self.params, self.adam)
        except NumericFailureError as e:
            raise NumericFailureError(e.details, param_name=e.param_name, epoch=self.epoch, step=step) from e
        return float(loss), norm

    def validate(self, scenes: list[PreparedScene]) -> float:
        values = []
        for start in range(0, len(scenes), self.cfg.batch_size):
            batch = collate(scenes[start:start + self.cfg.batch_size], self.pipeline.precision)
            values.extend(per_scene_si_sdr(batch, self.pipeline.stft, **self._graph_kwargs()))
        return float(np.nanmean(values)) if values else math.nan

    def run_epoch(self, scenes: list[PreparedScene], cancel_event: threading.Event | None = None) -> dict | None:
        """Shuffled pass over ``scenes``; None when cancelled midway."""
        rng = np.random.default_rng([self.cfg.seed, self.epoch])
        order = rng.permutation(len(scenes))
        losses, norms = [], []
        for step, start in enumerate(range(0, len(order), self.cfg.batch_size)):
            if cancel_event is not None and cancel_event.is_set():
                return None
            batch = collate([scenes[i] for i in order[start:start + self.cfg.batch_size]], self.pipeline.precision)
            loss, norm = self.train_step(batch, step)
            losses.append(loss)
            norms.append(norm)
            logger.debug(f"Epoch {self.epoch} step {step}: loss {loss:.4f}, grad norm {norm:.4g}")
        return {"train-loss": float(np.mean(losses)), "train-si-sdr-db": -float(np.mean(losses)),
                "grad-norm": float(np.mean(norms))}

    def record_epoch(self, entry: dict, val_si_sdr: float) -> bool:
        """Updates the early-stopping state; returns True when the epoch is the best so far."""
        improved = math.isfinite(val_si_sdr) and val_si_sdr > self.best_val
        if improved:
            self.best_val = val_si_sdr
            self.best_epoch = self.epoch
            self.best_entries = self.params.to_entries()
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        entry.update({"epoch": self.epoch, "val-si-sdr-db": val_si_sdr, "best": improved})
        self.history.append(entry)
        return improved

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.cfg.patience or self.epoch >= self.cfg.max_epochs

    def save_best(self) -> None:
        if self.estimator is not None:
            self.estimator.save(self.out_dir / ESTIMATOR_FILE)
        if self.enhancer is not None:
            self.enhancer.save(self.out_dir / ENHANCER_FILE)

    def save_checkpoint(self) -> None:
        entries = self.params.to_entries("model/")
        entries.update(self.adam.to_entries("adam/"))
        entries["state/epoch"] = np.array(self.epoch, dtype=np.int64)
        entries["state/bad-epochs"] = np.array(self.bad_epochs, dtype=np.int64)
        entries["state/best-epoch"] = np.array(-1 if self.best_epoch is None else self.best_epoch, dtype=np.int64)
        entries["state/best-val"] = np.array(self.best_val, dtype=np.float64)
        if self.best_entries is not None:
            entries.update({f"best/{k}": v for k, v in self.best_entries.items()})
        write_weights(self.out_dir / CHECKPOINT_FILE, entries, self.params.architecture)
        atomic_write_json({"pipeline": self.pipeline.to_dict(), "train": self.cfg.to_dict(),
                           "history": self.history}, str(self.out_dir / LOG_FILE))

    def load_checkpoint(self) -> bool:
        path = self.out_dir / CHECKPOINT_FILE
        if not path.exists():
            return False
        entries, architecture = ensure_loaded(path)
        if architecture.get("target") != self.cfg.target:
            raise ConfigError("train.target", f"checkpoint was written for target '{architecture.get('target')}'")
        self.params.load_entries(entries, prefix="model/", source=str(path))
        self.adam.load_entries(entries, prefix="adam/")
        self.epoch = int(entries["state/epoch"])
        self.bad_epochs = int(entries["state/bad-epochs"])
        best_epoch = int(entries["state/best-epoch"])
        self.best_epoch = None if best_epoch < 0 else best_epoch
        self.best_val = float(entries["state/best-val"])
        best = {k[len("best/"):]: np.array(v) for k, v in entries.items() if k.startswith("best/")}
        self.best_entries = best or None
        log_path = self.out_dir / LOG_FILE
        if log_path.exists():
            with log_path.open("r", encoding="utf-8") as f:
                self.history = json.load(f).get("history", [])
        logger.info(f"Resumed from {path} after epoch {self.epoch} (Adam step {self.adam.step_count})")
        return True

    def restore_best(self) -> None:
        if self.best_entries is not None:
            self.params.load_entries(self.best_entries, source="<best epoch>")


def train(train_manifest: Manifest, val_manifest: Manifest, cfg: TrainConfig, pipeline: PipelineConfig, out_dir, *,
          resume: bool = False, epoch_cb: EpochCallback | None = None,
          cancel_event: threading.Event | None = None) -> TrainingResult:
    """
    Trains on the "train" split of ``train_manifest`` with early stopping on the
    mean SI-SDR of the "val" split of ``val_manifest``.

    Raises:
        ConfigError: the target does not fit the pipeline configuration.
        NumericFailureError: a loss or gradient became non-finite; carries epoch and step.
        ValueError: a split is empty.
    """
    _check_target(cfg, pipeline)
    train_records = train_manifest.split("train")[:cfg.max_train_scenes]
    val_records = val_manifest.split("val")[:cfg.max_val_scenes]
    if not train_records or not val_records:
        raise ValueError(f"need train and val scenes, got {len(train_records)} and {len(val_records)}")
    out_path = pathlib.Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)

    num_mics = train_records[0].load_bundle().num_mics
    frozen = None
    if cfg.target == "estimator" and pipeline.uses_lstm_enhancer:
        frozen = load_models(pipeline.with_updates(estimator="fixed"), num_mics)
    trainer = Trainer(cfg, pipeline, num_mics, out_path)
    if resume:
        trainer.load_checkpoint()

    logger.info(f"Preparing {len(train_records)} training and {len(val_records)} validation scenes")
    train_scenes = prepare_scenes(train_records, pipeline, frozen, precompute_estimates=trainer.precompute_estimates)
    val_scenes = prepare_scenes(val_records, pipeline, frozen, precompute_estimates=trainer.precompute_estimates)

    result = TrainingResult(out_path)
    while not trainer.should_stop:
        trainer.epoch += 1
        started = time.perf_counter()
        entry = trainer.run_epoch(train_scenes, cancel_event)
        if entry is None:
            trainer.epoch -= 1
            result.stopped = "cancelled"
            logger.info(f"Training cancelled during epoch {trainer.epoch + 1}")
            break
        val_si_sdr = trainer.validate(val_scenes)
        entry["seconds"] = time.perf_counter() - started
        if trainer.record_epoch(entry, val_si_sdr):
            trainer.save_best()
        trainer.save_checkpoint()
        logger.info(f"Epoch {trainer.epoch}/{cfg.max_epochs}: train {entry['train-si-sdr-db']:.2f} dB, "
                    f"val {val_si_sdr:.2f} dB (best {trainer.best_val:.2f} dB at epoch {trainer.best_epoch})")
        if epoch_cb:
            epoch_cb(trainer.epoch, cfg.max_epochs, entry)
    else:
        if trainer.bad_epochs >= cfg.patience:
            result.stopped = "early-stopping"
            logger.info(f"Early stopping after {trainer.bad_epochs} epochs without improvement")

    trainer.restore_best()
    result.history = trainer.history
    result.best_epoch = trainer.best_epoch
    result.best_val_si_sdr_db = trainer.best_val
    return result
