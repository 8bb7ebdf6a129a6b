import json

import numpy as np
import pytest
import torch

from posebeam.application import EXIT_CONFIG, EXIT_ERROR, EXIT_NUMERIC, EXIT_OK, PosebeamApplication
from posebeam.audio.wav_io import write_wav
from posebeam.models.scene import Manifest
from posebeam.models.signals import Waveform

TINY_PIPELINE = {"window-len": 128, "hop": 64, "hidden-size": 4, "num-layers": 1, "f-info-channels": 4,
                 "precision": "float64"}


def _config(tmp_path, data) -> str:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return str(path)


def _run(*argv) -> int:
    return PosebeamApplication().run(["posebeam", *argv])


def test_invalid_config_exits_with_config_status(tmp_path):
    assert _run("--config", _config(tmp_path, {"pipeline": {"estimatr": "rank1"}}), "bench") == EXIT_CONFIG


def test_bench_needs_a_learned_estimator(tmp_path):
    config = _config(tmp_path, {"pipeline": {"estimator": "fixed"}})
    assert _run("--config", config, "bench") == EXIT_CONFIG


def test_bench_writes_a_report(tmp_path, capsys):
    config = _config(tmp_path, {"pipeline": {"window-len": 64, "hop": 32, "hidden-size": 4, "num-layers": 1,
                                             "f-info-channels": 4}})
    out = tmp_path / "bench.json"
    assert _run("--config", config, "bench", "--mics", "2", "--duration", "0.1", "--out", str(out)) == EXIT_OK
    assert "rtf" in json.loads(out.read_text())
    assert "flops-per-frame-total:" in capsys.readouterr().out


def test_simulate_writes_a_manifest(tmp_path):
    config = _config(tmp_path, {"simulation": {"scene-duration-s": 0.5, "num-mics": 2, "max-order": 1,
                                               "noise-sources-range": [1, 1], "t60-range-s": [0.25, 0.3]}})
    out = tmp_path / "data"
    assert _run("simulate", "--config", config, "--out", str(out), "--scenes", "3", "--seed", "4", "--synthetic",
                "--static") == EXIT_OK
    manifest = Manifest.load_from_json(out / "manifest.json")
    assert len(manifest.records) == 3
    assert manifest.settings["split-seed"] == 4 and manifest.settings["num-mics"] == 2
    assert all(record.load_trajectory().is_static for record in manifest.records)


def test_eval_rows(tmp_path, tiny_manifest, capsys):
    config = _config(tmp_path, {"pipeline": TINY_PIPELINE})
    status = _run("--config", config, "eval", "--manifest", str(tiny_manifest.path), "--rows", "oracle:fixed",
                  "echoic_irm:none", "--out", str(tmp_path / "results"))
    assert status == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "condition,enhancer,estimator,num_scenes,si_sdr_db,config_hash"
    assert [line.split(",")[1:3] for line in lines[1:]] == [["unprocessed", "reference-mic"], ["oracle", "fixed"],
                                                           ["echoic_irm", "none"]]
    assert (tmp_path / "results" / "results.json").is_file()


@pytest.mark.parametrize("rows", [["oraclefixed"], ["oracle:pca"]])
def test_eval_rejects_bad_rows(tmp_path, tiny_manifest, rows):
    status = _run("eval", "--manifest", str(tiny_manifest.path), "--rows", *rows, "--out", str(tmp_path))
    assert status == EXIT_CONFIG


def test_missing_manifest_is_an_error(tmp_path):
    assert _run("eval", "--manifest", str(tmp_path / "absent.json"), "--out", str(tmp_path)) == EXIT_ERROR
    assert _run("adapt", "--out", str(tmp_path)) == EXIT_CONFIG


def test_enhance_needs_a_blind_enhancer(tmp_path, rng):
    source = tmp_path / "in.wav"
    write_wav(source, Waveform(rng.uniform(-0.1, 0.1, (2, 1600)).astype(np.float32)))
    config = _config(tmp_path, {"pipeline": {"enhancer": "oracle", "estimator": "fixed"}})
    assert _run("--config", config, "enhance", str(source), str(tmp_path / "out.wav")) == EXIT_CONFIG
    assert not (tmp_path / "out.wav").exists()


def test_enhance_without_weights_is_an_error(tmp_path, rng):
    source = tmp_path / "in.wav"
    write_wav(source, Waveform(rng.uniform(-0.1, 0.1, (2, 1600)).astype(np.float32)))
    config = _config(tmp_path, {"pipeline": {"enhancer": "lstm256", "estimator": "fixed"}})
    assert _run("--config", config, "enhance", str(source), str(tmp_path / "out.wav")) == EXIT_ERROR


def test_numeric_failure_during_training(tmp_path, tiny_manifest, monkeypatch):
    monkeypatch.setattr("posebeam.pipeline.trainer.pipeline_loss",
                        lambda *args, **kwargs: torch.tensor(float("nan"), dtype=torch.float64))
    config = _config(tmp_path, {"pipeline": TINY_PIPELINE, "train": {"max-epochs": 1, "patience": 1}})
    status = _run("--config", config, "train", "--manifest", str(tiny_manifest.path), "--out", str(tmp_path / "run"))
    assert status == EXIT_NUMERIC


def test_train_and_tune_buffer(tmp_path, tiny_manifest, capsys):
    config = _config(tmp_path, {"pipeline": TINY_PIPELINE, "train": {"max-epochs": 1, "patience": 1,
                                                                     "batch-size": 4}})
    run_dir = tmp_path / "run"
    assert _run("--config", config, "train", "--manifest", str(tiny_manifest.path), "--out", str(run_dir)) == EXIT_OK
    assert (run_dir / "estimator.pbw").is_file()

    assert _run("--config", config, "tune-buffer", "--manifest", str(tiny_manifest.path),
                "--out", str(tmp_path / "tune")) == EXIT_OK
    assert "best buffer-frames:" in capsys.readouterr().out
    assert (tmp_path / "tune" / "buffer-search.csv").is_file()
