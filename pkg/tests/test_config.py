import json

import pytest

from posebeam.models.config import (ENV_NUM_THREADS, ConfigError, PipelineConfig, RunConfig, SimulationConfig,
                                    TrainConfig, load_config, num_threads, parse_config)


def _write(tmp_path, data) -> str:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data) if not isinstance(data, str) else data)
    return str(path)


def test_missing_path_gives_defaults():
    assert load_config(None) == RunConfig()


def test_sections_are_parsed(tmp_path):
    config = load_config(_write(tmp_path, {
        "pipeline": {"estimator": "cholesky", "window-len": 1024, "hop": 512, "f-info": False},
        "train": {"lr": 1e-3, "betas": [0.8, 0.99]},
        "simulation": {"snr-range-db": [-3, 3], "num-mics": 4},
    }))
    assert config.pipeline.estimator == "cholesky"
    assert config.pipeline.stft.num_bins == 513
    assert config.pipeline.f_info is False
    assert config.train.betas == (0.8, 0.99)
    assert config.simulation.snr_range_db == (-3.0, 3.0)
    assert config.simulation.num_mics == 4


def test_legacy_keys_are_migrated(tmp_path):
    config = load_config(_write(tmp_path, {"pipeline": {"buffer": 20}, "train": {"epochs": 7, "patience": 3}}))
    assert config.pipeline.buffer_frames == 20
    assert config.train.max_epochs == 7


def test_new_key_wins_over_legacy_key():
    config = parse_config({"pipeline": {"buffer": 20, "buffer-frames": 30}})
    assert config.pipeline.buffer_frames == 30


@pytest.mark.parametrize("data, key", [
    ({"pipeline": {"estimatr": "rank1"}}, "pipeline.estimatr"),
    ({"pipeline": {"hop": "256"}}, "pipeline.hop"),
    ({"pipeline": {"f-info": 1}}, "pipeline.f-info"),
    ({"pipeline": {"estimator": "pca"}}, "estimator"),
    ({"train": {"patience": 0}}, "patience"),
    ({"simulation": {"t60-range-s": [0.1, 0.5]}}, "t60-range-s"),
    ({"simulation": {"split-fractions": [0.5, 0.5, 0.5]}}, "split-fractions"),
    ({"extra": {}}, "extra"),
])
def test_invalid_values_name_the_key(data, key):
    with pytest.raises(ConfigError) as err:
        parse_config(data)
    assert err.value.key == key


def test_unreadable_files_raise_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "{not json"))


def test_window_without_inverse_is_rejected():
    with pytest.raises(ConfigError):
        PipelineConfig(window_len=512, hop=1024)


def test_steering_defaults_follow_the_estimator():
    assert PipelineConfig(estimator="rank1").steering_mode == "first_column"
    assert PipelineConfig(estimator="buffer").steering_mode == "principal"
    assert PipelineConfig(estimator="buffer", steering="first_column").steering_mode == "first_column"


def test_config_hash_tracks_the_pipeline_but_not_the_dataset():
    base = PipelineConfig()
    assert base.config_hash() == PipelineConfig().config_hash()
    assert base.config_hash() == base.with_updates(manifest="/data/manifest.json").config_hash()
    assert base.config_hash() != base.with_updates(estimator="cholesky").config_hash()
    assert len(base.config_hash()) == 12


def test_to_dict_uses_kebab_keys():
    data = RunConfig().to_dict()
    assert "window-len" in data["pipeline"]
    assert "max-epochs" in data["train"]
    assert data["simulation"]["split-fractions"] == pytest.approx([2 / 3, 1 / 6, 1 / 6])
    assert parse_config(data) == RunConfig()


def test_desk_scale_defaults():
    assert SimulationConfig().num_samples == 80000
    assert TrainConfig().lr == 3e-4
    assert PipelineConfig().hidden_size == 128


def test_num_threads_from_environment(monkeypatch):
    monkeypatch.setenv(ENV_NUM_THREADS, "3")
    assert num_threads() == 3
    monkeypatch.setenv(ENV_NUM_THREADS, "zero")
    with pytest.raises(ConfigError):
        num_threads()
    monkeypatch.setenv(ENV_NUM_THREADS, "0")
    with pytest.raises(ConfigError):
        num_threads()
    monkeypatch.delenv(ENV_NUM_THREADS)
    assert num_threads() >= 1
