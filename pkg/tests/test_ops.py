import pytest
import torch

from posebeam.autodiff.ops import (LstmWeights, conv1d_freq, hermitian, lstm_cell, lstm_layer_weights, outer,
                                   quadratic_form, stack_complex, unstack_complex)

GRADCHECK = dict(eps=1e-6, atol=1e-6, rtol=1e-4)


def _random_lstm(input_size=3, hidden=4, generator=None) -> LstmWeights:
    def rand(*shape):
        return torch.randn(*shape, dtype=torch.float64, generator=generator, requires_grad=True)
    return LstmWeights(rand(4 * hidden, input_size), rand(4 * hidden, hidden), rand(4 * hidden), rand(4 * hidden))


@pytest.mark.parametrize("seed", range(5))
def test_lstm_cell_gradients(seed):
    gen = torch.Generator().manual_seed(seed)
    weights = _random_lstm(generator=gen)
    x = torch.randn(2, 3, dtype=torch.float64, generator=gen, requires_grad=True)
    h = torch.randn(2, 4, dtype=torch.float64, generator=gen, requires_grad=True)
    c = torch.randn(2, 4, dtype=torch.float64, generator=gen, requires_grad=True)

    def loss(x, h, c, *w):
        h_next, c_next = lstm_cell(x, h, c, LstmWeights(*w))
        return (h_next ** 2).sum() + c_next.sum()

    assert torch.autograd.gradcheck(loss, (x, h, c, *weights), **GRADCHECK)


def test_lstm_cell_matches_torch_cell():
    torch.manual_seed(0)
    cell = torch.nn.LSTMCell(3, 5).double()
    weights = LstmWeights(cell.weight_ih, cell.weight_hh, cell.bias_ih, cell.bias_hh)
    x, h, c = torch.randn(4, 3).double(), torch.randn(4, 5).double(), torch.randn(4, 5).double()
    expected_h, expected_c = cell(x, (h, c))
    got_h, got_c = lstm_cell(x, h, c, weights)
    torch.testing.assert_close(got_h, expected_h)
    torch.testing.assert_close(got_c, expected_c)


def test_lstm_layer_weights_follow_the_module():
    lstm = torch.nn.LSTM(3, 4, num_layers=2)
    second = lstm_layer_weights(lstm, 1)
    assert second.input_size == 4 and second.hidden_size == 4
    assert second.weight_ih is lstm.weight_ih_l1


def test_lstm_cell_rejects_bad_shapes():
    weights = _random_lstm()
    with pytest.raises(ValueError):
        lstm_cell(torch.zeros(2, 5, dtype=torch.float64), torch.zeros(2, 4), torch.zeros(2, 4), weights)
    with pytest.raises(ValueError):
        lstm_cell(torch.zeros(2, 3, dtype=torch.float64), torch.zeros(3, 4), torch.zeros(2, 4), weights)


@pytest.mark.parametrize("seed", range(5))
def test_conv1d_freq_gradients(seed):
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(2, 6, 3, dtype=torch.float64, generator=gen, requires_grad=True)
    kernels = torch.randn(4, 3, 3, dtype=torch.float64, generator=gen, requires_grad=True)
    bias = torch.randn(4, dtype=torch.float64, generator=gen, requires_grad=True)
    assert torch.autograd.gradcheck(lambda *a: conv1d_freq(*a).sin().sum(), (x, kernels, bias), **GRADCHECK)


def test_conv1d_freq_against_explicit_sum():
    gen = torch.Generator().manual_seed(1)
    x = torch.randn(7, 2, dtype=torch.float64, generator=gen)
    kernels = torch.randn(3, 2, 3, dtype=torch.float64, generator=gen)
    out = conv1d_freq(x, kernels)
    padded = torch.cat([torch.zeros(1, 2, dtype=torch.float64), x, torch.zeros(1, 2, dtype=torch.float64)])
    for f in range(7):
        expected = torch.einsum("oik,ki->o", kernels, padded[f:f + 3])
        torch.testing.assert_close(out[f], expected)


def test_conv1d_freq_keeps_leading_axes():
    out = conv1d_freq(torch.zeros(2, 3, 9, 4), torch.zeros(5, 4, 3))
    assert out.shape == (2, 3, 9, 5)
    with pytest.raises(ValueError):
        conv1d_freq(torch.zeros(9, 4), torch.zeros(5, 4, 2))


@pytest.mark.parametrize("seed", range(5))
def test_complex_products_gradients(seed):
    gen = torch.Generator().manual_seed(seed)
    a = torch.randn(2, 3, 3, dtype=torch.complex128, generator=gen, requires_grad=True)
    v = torch.randn(2, 3, dtype=torch.complex128, generator=gen, requires_grad=True)
    assert torch.autograd.gradcheck(lambda a, v: quadratic_form(a, v).real.sum() + quadratic_form(a, v).imag.sum(),
                                    (a, v), **GRADCHECK)
    assert torch.autograd.gradcheck(lambda v: outer(v).abs().sum(), (v,), **GRADCHECK)


def test_outer_and_quadratic_form():
    v = torch.tensor([1 + 1j, 2 - 1j], dtype=torch.complex128)
    product = outer(v)
    torch.testing.assert_close(product, hermitian(product))
    torch.testing.assert_close(quadratic_form(torch.eye(2, dtype=torch.complex128), v),
                               torch.tensor(7 + 0j, dtype=torch.complex128))


def test_stack_and_unstack_complex():
    z = torch.tensor([[1 + 2j, 3 - 4j]], dtype=torch.complex128)
    stacked = stack_complex(z)
    torch.testing.assert_close(stacked, torch.tensor([[1.0, 3.0, 2.0, -4.0]], dtype=torch.float64))
    torch.testing.assert_close(unstack_complex(stacked), z)
    with pytest.raises(ValueError):
        unstack_complex(torch.zeros(3))
