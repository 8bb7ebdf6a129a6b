import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posebeam.models.signals import Waveform
from posebeam.simulation.convolution import crossfade_gains, segment_bounds, time_varying_convolve


@settings(max_examples=50, deadline=None)
@given(num_samples=st.integers(10, 3000), num_segments=st.integers(1, 10), crossfade=st.integers(0, 512))
def test_crossfade_gains_sum_to_one(num_samples, num_segments, crossfade):
    gains = crossfade_gains(num_samples, num_segments, crossfade)
    assert gains.shape == (num_segments, num_samples)
    np.testing.assert_allclose(gains.sum(axis=0), 1.0, atol=1e-12)
    assert gains.min() >= 0.0


def test_segment_bounds_cover_the_signal():
    bounds = segment_bounds(1000, 3)
    assert bounds[0] == 0 and bounds[-1] == 1000
    assert np.all(np.diff(bounds) > 0)


def test_single_segment_is_plain_convolution(rng):
    x = rng.standard_normal(500)
    rirs = rng.standard_normal((1, 3, 40))
    out = time_varying_convolve(Waveform(x), rirs)
    assert out.samples.shape == (3, 539)
    for m in range(3):
        np.testing.assert_allclose(out.samples[m], np.convolve(x, rirs[0, m]), atol=1e-10)


def test_hard_switch_between_responses(rng):
    x = rng.standard_normal(600)
    rirs = rng.standard_normal((2, 2, 30))
    out = time_varying_convolve(Waveform(x), rirs, crossfade=0)
    first, second = x.copy(), x.copy()
    first[300:] = 0.0
    second[:300] = 0.0
    for m in range(2):
        expected = np.convolve(first, rirs[0, m]) + np.convolve(second, rirs[1, m])
        np.testing.assert_allclose(out.samples[m], expected, atol=1e-10)


def test_crossfaded_output_is_linear_in_the_source(rng):
    rirs = rng.standard_normal((4, 2, 25))
    x, y = rng.standard_normal(800), rng.standard_normal(800)
    combined = time_varying_convolve(Waveform(x + 2 * y), rirs, crossfade=64).samples
    separate = (time_varying_convolve(Waveform(x), rirs, crossfade=64).samples
                + 2 * time_varying_convolve(Waveform(y), rirs, crossfade=64).samples)
    np.testing.assert_allclose(combined, separate, atol=1e-9)


def test_repeated_response_matches_static(rng):
    x = rng.standard_normal(400)
    rir = rng.standard_normal((1, 2, 20))
    moving = time_varying_convolve(Waveform(x), np.repeat(rir, 5, axis=0), crossfade=32)
    static = time_varying_convolve(Waveform(x), rir)
    np.testing.assert_allclose(moving.samples, static.samples, atol=1e-10)


def test_invalid_inputs_raise(rng):
    with pytest.raises(ValueError):
        time_varying_convolve(Waveform(rng.standard_normal((2, 100))), rng.standard_normal((1, 2, 5)))
    with pytest.raises(ValueError):
        time_varying_convolve(Waveform(rng.standard_normal(100)), rng.standard_normal((2, 5)))
    with pytest.raises(ValueError):
        time_varying_convolve(Waveform(rng.standard_normal(3)), rng.standard_normal((5, 1, 2)))
