import math
import threading

import numpy as np
import pytest
import torch

from posebeam.autodiff.optim import NumericFailureError
from posebeam.models.config import ConfigError, PipelineConfig, TrainConfig
from posebeam.models.scene import Manifest
from posebeam.pipeline.trainer import (CHECKPOINT_FILE, PreparedScene, Trainer, collate, prepare_scenes, train)
from posebeam.utils.models import ensure_loaded


def _train_config(**changes) -> TrainConfig:
    options = dict(lr=1e-3, batch_size=4, max_epochs=2, patience=2, seed=0)
    options.update(changes)
    return TrainConfig(**options)


def test_collate_stacks_scenes():
    scenes = [PreparedScene(f"s{i}", np.ones((2, 3, 5), dtype=complex) * i, np.full(16, float(i)))
              for i in range(3)]
    batch = collate(scenes, "float32")
    assert batch.mixture.shape == (3, 2, 3, 5) and batch.mixture.dtype == torch.complex64
    assert batch.reference.dtype == torch.float32
    assert batch.speech is None and batch.num_samples == 16

    scenes[1].reference = np.zeros(20)
    with pytest.raises(ValueError):
        collate(scenes, "float64")


@pytest.mark.parametrize("target, pipeline", [
    ("estimator", PipelineConfig(estimator="fixed")),
    ("enhancer", PipelineConfig(enhancer="oracle")),
    ("joint", PipelineConfig(enhancer="lstm256", estimator="buffer")),
])
def test_target_must_fit_the_pipeline(tmp_path, target, pipeline):
    with pytest.raises(ConfigError):
        Trainer(_train_config(target=target), pipeline, 2, tmp_path)


def _prepared(manifest, pipeline, count=2):
    return prepare_scenes(manifest.split("train")[:count], pipeline, None, precompute_estimates=True)


def test_zero_learning_rate_keeps_the_weights(tmp_path, tiny_manifest, tiny_pipeline):
    trainer = Trainer(_train_config(lr=0.0), tiny_pipeline, 2, tmp_path)
    batch = collate(_prepared(tiny_manifest, tiny_pipeline), "float64")
    before = trainer.params.digest()
    loss, norm = trainer.train_step(batch, 0)
    assert math.isfinite(loss) and norm > 0
    assert trainer.params.digest() == before


def test_joint_training_steps_through_the_mask_network(tmp_path, tiny_manifest, tiny_pipeline):
    pipeline = tiny_pipeline.with_updates(enhancer="lstm256", enhancer_hidden=3)
    trainer = Trainer(_train_config(target="joint"), pipeline, 2, tmp_path)
    assert not trainer.precompute_estimates
    scenes = prepare_scenes(tiny_manifest.split("train")[:2], pipeline, None, precompute_estimates=False)
    before = trainer.enhancer.digest()
    loss, _ = trainer.train_step(collate(scenes, "float64"), 0)
    assert math.isfinite(loss)
    assert trainer.enhancer.digest() != before


def test_training_writes_the_best_weights_and_the_log(tmp_path, tiny_manifest, tiny_pipeline):
    epochs = []
    result = train(tiny_manifest, tiny_manifest, _train_config(), tiny_pipeline, tmp_path,
                   epoch_cb=lambda epoch, total, entry: epochs.append((epoch, total)))
    assert epochs == [(1, 2), (2, 2)]
    assert [entry["epoch"] for entry in result.history] == [1, 2]
    assert result.best_epoch in (1, 2)
    assert result.stopped == "max-epochs"
    assert math.isfinite(result.best_val_si_sdr_db)
    assert result.estimator_path.is_file() and result.log_path.is_file()
    assert (tmp_path / CHECKPOINT_FILE).is_file()
    assert not result.enhancer_path.exists()
    for entry in result.history:
        assert {"train-loss", "val-si-sdr-db", "grad-norm", "best", "seconds"} <= set(entry)


def test_resume_restores_the_optimizer_state(tmp_path, tiny_manifest, tiny_pipeline):
    train(tiny_manifest, tiny_manifest, _train_config(max_epochs=1, patience=1), tiny_pipeline, tmp_path)
    entries, _ = ensure_loaded(tmp_path / CHECKPOINT_FILE)

    trainer = Trainer(_train_config(max_epochs=1, patience=1), tiny_pipeline, 2, tmp_path)
    assert trainer.load_checkpoint()
    assert trainer.epoch == 1
    assert trainer.adam.step_count == 1
    assert trainer.best_epoch == 1
    for key, value in trainer.adam.to_entries().items():
        assert np.array_equal(value, entries[key]), key
    assert len(trainer.history) == 1

    resumed = train(tiny_manifest, tiny_manifest, _train_config(max_epochs=2, patience=1), tiny_pipeline, tmp_path,
                    resume=True)
    assert [entry["epoch"] for entry in resumed.history] == [1, 2]


def test_checkpoint_target_must_match(tmp_path, tiny_pipeline):
    Trainer(_train_config(), tiny_pipeline, 2, tmp_path).save_checkpoint()
    other = Trainer(_train_config(target="joint"), tiny_pipeline.with_updates(enhancer="lstm256", enhancer_hidden=3),
                    2, tmp_path)
    with pytest.raises(ConfigError):
        other.load_checkpoint()


def test_non_finite_loss_reports_epoch_and_step(tmp_path, tiny_manifest, tiny_pipeline, monkeypatch):
    monkeypatch.setattr("posebeam.pipeline.trainer.pipeline_loss",
                        lambda *args, **kwargs: torch.tensor(math.nan, dtype=torch.float64))
    with pytest.raises(NumericFailureError) as err:
        train(tiny_manifest, tiny_manifest, _train_config(), tiny_pipeline, tmp_path)
    assert err.value.epoch == 1
    assert err.value.step == 0


def test_cancellation_stops_before_the_first_step(tmp_path, tiny_manifest, tiny_pipeline):
    cancel = threading.Event()
    cancel.set()
    result = train(tiny_manifest, tiny_manifest, _train_config(), tiny_pipeline, tmp_path, cancel_event=cancel)
    assert result.stopped == "cancelled"
    assert result.history == [] and result.best_epoch is None


def test_empty_split_is_rejected(tmp_path, tiny_manifest, tiny_pipeline):
    only_test = Manifest(records=tiny_manifest.split("test"))
    with pytest.raises(ValueError):
        train(only_test, tiny_manifest, _train_config(), tiny_pipeline, tmp_path)
