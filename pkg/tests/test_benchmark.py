import pytest

from posebeam.estimation.learned import mvdr_flops_per_frame
from posebeam.models.config import ConfigError, PipelineConfig
from posebeam.pipeline.benchmark import benchmark

SMALL = PipelineConfig(window_len=64, hop=32, hidden_size=4, num_layers=1, f_info_channels=4)


def test_small_benchmark_report():
    report = benchmark(SMALL, num_mics=2, duration_s=0.1)
    assert report.num_bins == 33
    assert report.num_frames == SMALL.stft.num_frames(1600)
    assert report.audio_s == pytest.approx(0.1)
    assert report.rtf > 0 and report.ms_per_frame > 0
    assert report.flops_per_frame_total == 2 * report.flops_per_frame_estimator + mvdr_flops_per_frame(2, 33)
    assert report.parameters_total == 2 * report.parameters_per_estimator
    assert report.storage_mb == pytest.approx(report.parameters_total * 4 / 1e6)

    data = report.to_dict()
    assert {"rtf", "ms-per-frame", "flops-per-frame-total", "storage-mb"} <= set(data)


def test_benchmark_with_the_mask_network():
    cfg = SMALL.with_updates(enhancer="lstm256", enhancer_hidden=3, estimator="cholesky", precision="float64")
    report = benchmark(cfg, num_mics=3, duration_s=0.05)
    assert report.num_mics == 3
    assert report.storage_mb == pytest.approx(report.parameters_total * 8 / 1e6)


def test_classical_estimators_cannot_be_benchmarked():
    with pytest.raises(ConfigError):
        benchmark(SMALL.with_updates(estimator="fixed"))
