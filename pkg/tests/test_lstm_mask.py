import numpy as np
import pytest
import torch

from posebeam.enhancement.lstm_mask import MaskNet, build_mask_net, lstm_mask
from posebeam.models.signals import Spectrogram, StftConfig

CONFIG = StftConfig(window_len=32, hop=16)


@pytest.fixture
def net():
    torch.manual_seed(0)
    return MaskNet(CONFIG.num_bins, hidden_size=8, num_layers=2).double()


def _mixture(gen, frames=10, channels=1) -> Spectrogram:
    shape = (channels, frames, CONFIG.num_bins)
    return Spectrogram(gen.standard_normal(shape) + 1j * gen.standard_normal(shape), CONFIG)


def test_mask_shape_and_range(net, rng):
    mask = lstm_mask(_mixture(rng), net)
    assert mask.shape == (10, CONFIG.num_bins)
    assert mask.values.min() > 0.0 and mask.values.max() < 1.0


def test_mask_is_causal(net, rng):
    mixture = _mixture(rng, frames=12)
    full = lstm_mask(mixture, net).values
    prefix = lstm_mask(mixture.with_bins(mixture.bins[:, :5]), net).values
    np.testing.assert_allclose(full[:5], prefix, rtol=1e-12)

    changed = mixture.bins.copy()
    changed[:, 8:] *= 10.0
    altered = lstm_mask(mixture.with_bins(changed), net).values
    np.testing.assert_allclose(altered[:8], full[:8], rtol=1e-12)
    assert not np.allclose(altered[8:], full[8:])


def test_wrong_bin_count_is_rejected(net):
    with pytest.raises(ValueError):
        net(torch.zeros(1, 4, CONFIG.num_bins + 1, dtype=torch.complex128))


def test_multichannel_input_is_rejected(net, rng):
    with pytest.raises(ValueError):
        lstm_mask(_mixture(rng, channels=2), net)


def test_build_mask_net_sizes():
    params = build_mask_net("lstm256", 257)
    assert params.module.hidden_size == 256
    assert params.architecture == {"kind": "mask-lstm", "num-bins": 257, "hidden-size": 256, "num-layers": 3}
    assert build_mask_net("lstm512", 33).module.hidden_size == 512
    assert build_mask_net("lstm512", 33, hidden_override=6).module.hidden_size == 6
    with pytest.raises(KeyError):
        build_mask_net("gru", 33)


def test_mask_net_is_differentiable(net, rng):
    bins = torch.as_tensor(_mixture(rng).bins)
    net(bins).sum().backward()
    assert all(p.grad is not None and torch.isfinite(p.grad).all() for p in net.parameters())
