import pathlib
import sys

import numpy as np
import pytest
import torch

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from posebeam.models.config import PipelineConfig, SimulationConfig  # noqa: E402
from posebeam.models.signals import Waveform  # noqa: E402
from posebeam.simulation.dataset import generate_dataset, synthetic_noise, synthetic_speech  # noqa: E402
from posebeam.simulation.room import ArrayGeometry, RoomSpec  # noqa: E402
from posebeam.simulation.scene import render_scene  # noqa: E402
from posebeam.simulation.trajectory import PoseTrajectory  # noqa: E402
from posebeam.utils.models import clear_cache  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale slow tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale runs, skipped unless --runslow is given")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _fresh_weights_cache():
    clear_cache()
    yield
    clear_cache()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def render_test_scene(num_mics: int = 2, duration_s: float = 0.5, snr_db: float = 0.0, seed: int = 0,
                      scene_id: str = "scene-0", sample_rate_hz: int = 16000):
    """Small static scene: one talker and one point noise source in a 5 x 4.5 x 4 m room."""
    gen = np.random.default_rng(seed)
    n = int(duration_s * sample_rate_hz)
    room = RoomSpec(dims_m=(5.0, 4.5, 4.0), t60_s=0.3,
                    source_positions_m=((1.4, 1.2, 1.5), (3.9, 3.3, 1.6)),
                    array_center_m=(2.6, 2.2, 1.5), max_order=3)
    geom = ArrayGeometry.circular(num_mics, 0.07)
    speech = Waveform(synthetic_speech(gen, n, sample_rate_hz)[np.newaxis], sample_rate_hz)
    noise = Waveform(synthetic_noise(gen, n, sample_rate_hz)[np.newaxis], sample_rate_hz)
    return render_scene(room, geom, PoseTrajectory.static(0.0, duration_s), speech, [noise], snr_db,
                        scene_id=scene_id)


@pytest.fixture
def make_scene():
    return render_test_scene


@pytest.fixture(scope="session")
def small_scene():
    return render_test_scene(num_mics=4)


_TINY_SIMULATION = dict(scene_duration_s=0.5, num_mics=2, dynamic=False, max_order=1,
                       noise_sources_range=(1, 1), t60_range_s=(0.25, 0.3))


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """Six synthetic two-microphone scenes: 4 train, 1 val, 1 test."""
    out_dir = tmp_path_factory.mktemp("dataset")
    return generate_dataset(SimulationConfig(**_TINY_SIMULATION), out_dir, 6, 0, synthetic=True, max_workers=2)


@pytest.fixture
def tiny_pipeline():
    """Learned pipeline small enough to train in a test."""
    return PipelineConfig(window_len=128, hop=64, enhancer="oracle", estimator="rank1", hidden_size=4,
                          num_layers=1, f_info_channels=4, precision="float64")


def random_psd(gen: np.random.Generator, m: int, shape=(), loading: float = 1e-3) -> np.ndarray:
    a = gen.standard_normal((*shape, m, 2 * m)) + 1j * gen.standard_normal((*shape, m, 2 * m))
    return a @ np.swapaxes(a, -1, -2).conj() / (2 * m) + loading * np.eye(m)


@pytest.fixture
def psd():
    return random_psd


@pytest.fixture
def double_precision():
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)


@pytest.fixture
def tiny_simulation():
    return SimulationConfig(**_TINY_SIMULATION)
