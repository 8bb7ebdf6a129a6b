import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posebeam.audio.stft import stft
from posebeam.enhancement.masks import EnhancerOutput, Mask, apply_mask, irm, irm_enhance, oracle_split
from posebeam.models.signals import Spectrogram, StftConfig

CONFIG = StftConfig(window_len=16, hop=8)


def _spec(gen, channels=1, frames=6, scale=1.0) -> Spectrogram:
    shape = (channels, frames, CONFIG.num_bins)
    return Spectrogram(scale * (gen.standard_normal(shape) + 1j * gen.standard_normal(shape)), CONFIG)


def test_irm_is_a_ratio_in_unit_range(rng):
    speech, noise = _spec(rng), _spec(rng)
    mask = irm(speech, speech.with_bins(speech.bins + noise.bins))
    assert mask.values.min() >= 0.0 and mask.values.max() <= 1.0
    expected = np.abs(speech.bins[0]) / (np.abs(speech.bins[0]) + np.abs(noise.bins[0]))
    np.testing.assert_allclose(mask.values, expected, rtol=1e-10)


def test_irm_power_kind(rng):
    speech, noise = _spec(rng), _spec(rng)
    mask = irm(speech, speech.with_bins(speech.bins + noise.bins), kind="power")
    s2, n2 = np.abs(speech.bins[0]) ** 2, np.abs(noise.bins[0]) ** 2
    np.testing.assert_allclose(mask.values, s2 / (s2 + n2), rtol=1e-9)
    with pytest.raises(ValueError):
        irm(speech, speech, kind="log")


def test_irm_ignores_a_common_gain(rng):
    speech, noise = _spec(rng), _spec(rng)
    mixture = speech.with_bins(speech.bins + noise.bins)
    scaled = irm(speech.with_bins(speech.bins * 37.0), mixture.with_bins(mixture.bins * 37.0))
    np.testing.assert_allclose(scaled.values, irm(speech, mixture).values, rtol=1e-12)


def test_silent_bins_get_zero():
    silent = Spectrogram(np.zeros((1, 3, CONFIG.num_bins), dtype=complex), CONFIG)
    assert not irm(silent, silent).values.any()


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), exponent=st.integers(-20, 20))
def test_mask_split_adds_back_to_the_mixture_exactly(seed, exponent):
    gen = np.random.default_rng(seed)
    mixture = _spec(gen, channels=3, scale=2.0 ** exponent)
    values = gen.uniform(0.0, 1.0, mixture.bins.shape[1:])
    values[0, :3] = [0.0, 1.0, 0.5]
    out = apply_mask(Mask(values), mixture)
    assert np.array_equal(out.speech_est.bins + out.noise_est.bins, mixture.bins)
    np.testing.assert_allclose(out.speech_est.bins, values * mixture.bins, rtol=1e-12, atol=1e-300)


def test_mask_must_match_the_mixture(rng):
    with pytest.raises(ValueError):
        apply_mask(Mask(np.zeros((2, 3))), _spec(rng))


@pytest.mark.parametrize("values", [np.full((2, 3), 1.5), np.full((2, 3), -0.1), np.full((2, 3), np.nan),
                                    np.zeros(3)])
def test_invalid_masks(values):
    with pytest.raises(ValueError):
        Mask(values)


def test_enhancer_output_shapes_must_agree(rng):
    with pytest.raises(ValueError):
        EnhancerOutput(_spec(rng, channels=2), _spec(rng, channels=1))


def test_oracle_split_is_the_mixture_stft(small_scene):
    out = oracle_split(small_scene, CONFIG)
    mixture = stft(small_scene.mixture, CONFIG)
    assert out.num_channels == 4
    np.testing.assert_allclose(out.speech_est.bins + out.noise_est.bins, mixture.bins, atol=1e-9)
    np.testing.assert_allclose(out.speech_est.bins, stft(small_scene.speech_echoic, CONFIG).bins, atol=1e-12)


@pytest.mark.parametrize("reference", ["echoic", "anechoic"])
def test_irm_enhance(small_scene, reference):
    out = irm_enhance(small_scene, CONFIG, reference=reference)
    mixture = stft(small_scene.mixture, CONFIG)
    assert np.array_equal(out.speech_est.bins + out.noise_est.bins, mixture.bins)
    ratio = np.abs(out.speech_est.bins) / np.maximum(np.abs(mixture.bins), 1e-300)
    assert ratio.max() <= 1.0 + 1e-12


def test_irm_enhance_rejects_unknown_reference(small_scene):
    with pytest.raises(ValueError):
        irm_enhance(small_scene, CONFIG, reference="dry")
