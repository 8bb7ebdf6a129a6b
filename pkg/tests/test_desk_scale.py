import pytest

from posebeam.models.config import PipelineConfig, SimulationConfig, TrainConfig
from posebeam.pipeline.evaluation import (NO_MODIFICATION, adapt_experiments, evaluate_config, load_split,
                                          reference_report, tune_buffer)
from posebeam.pipeline.trainer import train
from posebeam.simulation.dataset import generate_dataset

pytestmark = pytest.mark.slow

FIXED = PipelineConfig(enhancer="oracle", estimator="fixed")


@pytest.fixture(scope="module")
def desk_manifest(tmp_path_factory):
    return generate_dataset(SimulationConfig(), tmp_path_factory.mktemp("desk"), 60, 0, synthetic=True)


@pytest.fixture(scope="module")
def static_manifest(tmp_path_factory):
    return generate_dataset(SimulationConfig(dynamic=False), tmp_path_factory.mktemp("desk-static"), 60, 0,
                            synthetic=True)


def test_oracle_mvdr_improves_almost_every_scene(desk_manifest):
    scenes = load_split(desk_manifest, "test")
    reference = reference_report(scenes, FIXED).values_db
    beamformed = evaluate_config(scenes, FIXED).values_db
    improved = sum(beamformed[scene_id] > value for scene_id, value in reference.items())
    assert improved >= 0.95 * len(reference)


def test_fixed_estimator_loses_on_moving_arrays(desk_manifest, static_manifest):
    static = evaluate_config(load_split(static_manifest, "val"), FIXED).mean_db
    dynamic = evaluate_config(load_split(desk_manifest, "val"), FIXED).mean_db
    assert dynamic <= static - 1.0


def test_buffered_estimator_beats_fixed_on_moving_arrays(desk_manifest):
    fixed = evaluate_config(load_split(desk_manifest, "val"), FIXED).mean_db
    best, table = tune_buffer(desk_manifest, FIXED)
    assert table.row("oracle", "buffer", f"buffer-{best}")["si_sdr_db"] > fixed


@pytest.fixture(scope="module")
def toy_training(tmp_path_factory):
    simulation = SimulationConfig(scene_duration_s=1.0, num_mics=2, dynamic=False, max_order=4,
                                  noise_sources_range=(1, 2))
    manifest = generate_dataset(simulation, tmp_path_factory.mktemp("toy"), 200, 1, synthetic=True)
    pipeline = PipelineConfig(enhancer="oracle", estimator="rank1", hidden_size=32, num_layers=2,
                              f_info_channels=16)
    result = train(manifest, manifest, TrainConfig(lr=1e-3, batch_size=8, max_epochs=12, patience=4, seed=0),
                   pipeline, tmp_path_factory.mktemp("toy-run"))
    return manifest, pipeline.with_updates(weights=str(result.estimator_path)), result


def test_training_learns_and_beats_the_reference_mic(toy_training):
    manifest, trained, result = toy_training
    assert result.best_val_si_sdr_db >= result.history[0]["val-si-sdr-db"] + 1.0

    scenes = load_split(manifest, "test")
    assert evaluate_config(scenes, trained).mean_db > reference_report(scenes, trained).mean_db


def test_trained_model_adapts_without_retraining(toy_training):
    manifest, trained, _ = toy_training
    table = adapt_experiments(trained, manifest)
    assert table.row("oracle", "rank1", "double-window") is not None
    assert table.row("oracle", "rank1", "halve-hop") is not None
    unmodified = table.row("oracle", "rank1", NO_MODIFICATION)["si_sdr_db"]
    assert table.row("oracle", "rank1", "dead-microphone")["si_sdr_db"] < unmodified