import os

import numpy as np
import pytest
import torch

from posebeam.autodiff.params import ModelParams
from posebeam.utils.models import (MAX_CACHED_WEIGHTS, WeightsNotAvailableError, cached_paths, decode_weights,
                                   encode_weights, ensure_loaded, read_weights, sidecar_path, write_weights)


def _params(seed=0) -> ModelParams:
    torch.manual_seed(seed)
    module = torch.nn.Sequential(torch.nn.Linear(3, 4), torch.nn.Linear(4, 2))
    return ModelParams(module, {"kind": "test-net", "width": 4})


def test_encoded_entries_decode_unchanged():
    entries = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b/c": np.array(3, dtype=np.int64),
               "d": np.linspace(0, 1, 5)}
    decoded = decode_weights(encode_weights(entries))
    assert list(decoded) == list(entries)
    for key, value in entries.items():
        assert decoded[key].dtype == value.dtype
        assert np.array_equal(decoded[key], value)


def test_corrupt_payloads_raise():
    payload = encode_weights({"a": np.ones(10, dtype=np.float32)})
    with pytest.raises(WeightsNotAvailableError, match="truncated"):
        decode_weights(payload[:-4])
    with pytest.raises(WeightsNotAvailableError, match="magic"):
        decode_weights(b"XXXX" + payload[4:])
    with pytest.raises(WeightsNotAvailableError, match="trailing"):
        decode_weights(payload + b"\x00")
    with pytest.raises(TypeError):
        encode_weights({"a": np.ones(2, dtype=np.int8)})


def test_save_and_load_restore_the_parameters(tmp_path):
    source = _params(0)
    path = tmp_path / "net.pbw"
    source.save(path)
    assert sidecar_path(path).is_file()
    _, architecture = read_weights(path)
    assert architecture["parameter-count"] == source.parameter_count() == 3 * 4 + 4 + 4 * 2 + 2

    target = _params(1)
    assert target.digest() != source.digest()
    target.load(path)
    assert target.digest() == source.digest()


def test_architecture_mismatch_is_rejected(tmp_path):
    path = tmp_path / "net.pbw"
    _params().save(path)
    other = _params()
    other.architecture["width"] = 8
    with pytest.raises(WeightsNotAvailableError, match="width"):
        other.load(path)


def test_missing_entries_and_shapes_are_rejected():
    params = _params()
    entries = params.to_entries()
    with pytest.raises(WeightsNotAvailableError, match="missing"):
        params.load_entries({k: v for k, v in entries.items() if k != "0.bias"})
    entries["0.bias"] = np.zeros(7, dtype=np.float32)
    with pytest.raises(WeightsNotAvailableError, match="shape"):
        params.load_entries(entries)


def test_prefixed_entries():
    params = _params()
    entries = params.to_entries("model/")
    assert all(k.startswith("model/") for k in entries)
    fresh = _params(3)
    fresh.load_entries(entries, prefix="model/")
    assert fresh.digest() == params.digest()


def test_missing_file_or_sidecar(tmp_path):
    with pytest.raises(WeightsNotAvailableError):
        ensure_loaded(tmp_path / "absent.pbw")
    path = tmp_path / "bare.pbw"
    path.write_bytes(encode_weights({"a": np.zeros(1, dtype=np.float32)}))
    with pytest.raises(WeightsNotAvailableError, match="sidecar"):
        read_weights(path)


def test_ensure_loaded_reads_once_per_modification(tmp_path):
    path = tmp_path / "w.pbw"
    write_weights(path, {"a": np.ones(3, dtype=np.float32)}, {"kind": "x"})
    messages = []
    first = ensure_loaded(path, lambda pct, msg: messages.append((pct, msg)))
    second = ensure_loaded(path, lambda pct, msg: messages.append((pct, msg)))
    assert first[0] is second[0]
    assert messages[-1][0] == 100.0 and "cache" in messages[-1][1]
    assert not first[0]["a"].flags.writeable


def test_ensure_loaded_reports_errors_through_the_callback(tmp_path):
    messages = []
    with pytest.raises(WeightsNotAvailableError):
        ensure_loaded(tmp_path / "absent.pbw", lambda pct, msg: messages.append(pct))
    assert messages == [-1.0]


def test_storage_and_repr():
    params = _params()
    assert params.storage_mb() == pytest.approx(params.parameter_count() * 4 / 1e6)
    assert "Sequential" in repr(params)


def test_weights_cache_keeps_the_most_recently_used_files(tmp_path):
    paths = []
    for i in range(MAX_CACHED_WEIGHTS + 2):
        path = tmp_path / f"w{i}.pbw"
        write_weights(path, {"a": np.full(2, i, dtype=np.float32)}, {"kind": "x"})
        paths.append(path)
    for path in paths[:MAX_CACHED_WEIGHTS]:
        ensure_loaded(path)
    ensure_loaded(paths[0])
    for path in paths[MAX_CACHED_WEIGHTS:]:
        ensure_loaded(path)

    cached = cached_paths()
    assert len(cached) == MAX_CACHED_WEIGHTS
    assert str(paths[0].resolve()) in cached
    assert str(paths[1].resolve()) not in cached and str(paths[2].resolve()) not in cached


def test_rewritten_weights_replace_their_cache_entry(tmp_path):
    path = tmp_path / "w.pbw"
    write_weights(path, {"a": np.zeros(2, dtype=np.float32)}, {"kind": "x"})
    os.utime(path, ns=(1_000_000_000, 1_000_000_000))
    ensure_loaded(path)
    write_weights(path, {"a": np.ones(2, dtype=np.float32)}, {"kind": "x"})
    os.utime(path, ns=(2_000_000_000, 2_000_000_000))
    entries, _ = ensure_loaded(path)
    assert np.array_equal(entries["a"], np.ones(2))
    assert cached_paths() == [str(path.resolve())]
