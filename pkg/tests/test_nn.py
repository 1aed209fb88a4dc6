import numpy as np
import pytest

from xaicyclegan import autograd as ag
from xaicyclegan.autograd import Tensor
from xaicyclegan.nn import ConvBlock, ConvSpec, ResidualBlock, init_weights, residual_forward


def test_init_deterministic():
    a, b, c = (ConvBlock(ConvSpec(3, 8, 3)) for _ in range(3))
    init_weights(a, 5)
    init_weights(b, 5)
    init_weights(c, 6)
    np.testing.assert_array_equal(a.weight.data, b.weight.data)
    assert not np.array_equal(a.weight.data, c.weight.data)


def test_init_statistics():
    block = ConvBlock(ConvSpec(64, 64, 3))
    init_weights(block, 0)
    w = block.weight.data
    assert abs(w.mean()) < 1e-3
    assert abs(w.std() - 0.02) < 1e-3
    assert not block.bias.data.any()


def test_norm_layers_have_no_bias():
    assert ConvBlock(ConvSpec(3, 4, 3, use_norm=True)).bias is None
    assert ConvBlock(ConvSpec(3, 4, 3)).bias is not None


@pytest.mark.parametrize("spec,size,expected", [
    (ConvSpec(3, 8, 3, 2, 1), 16, 8),
    (ConvSpec(3, 8, 7, 1, 3), 16, 16),
    (ConvSpec(8, 3, 3, 2, 1, transposed=True, output_padding=1), 8, 16),
])
def test_conv_arithmetic(spec, size, expected):
    assert spec.output_size(size) == expected
    block = ConvBlock(spec)
    init_weights(block, 0)
    out = block(Tensor(np.zeros((1, spec.in_channels, size, size), np.float32)))
    assert out.shape == (1, spec.out_channels, expected, expected)


def test_bad_spec():
    with pytest.raises(ValueError):
        ConvSpec(3, 4, 3, activation="gelu")
    with pytest.raises(ValueError):
        ConvSpec(3, 4, 3, output_padding=1)


def test_block_rejects_wrong_channels():
    with pytest.raises(ag.ShapeError):
        ConvBlock(ConvSpec(3, 4, 3))(Tensor(np.zeros((1, 2, 8, 8), np.float32)))


@pytest.mark.parametrize("size", [4, 8])
def test_zero_residual_is_identity(size):
    block = ResidualBlock(4, dtype=np.float64)
    x = Tensor(np.random.default_rng(size).standard_normal((2, 4, size, size)), requires_grad=True)
    y = residual_forward(block, x)
    assert y.shape == x.shape
    np.testing.assert_array_equal(y.data, x.data)
    ag.sum_(y).backward()
    np.testing.assert_array_equal(x.grad, np.ones_like(x.data))


def test_named_parameters_stable():
    block = ResidualBlock(4)
    names = [n for n, _ in block.named_parameters()]
    assert names == [n for n, _ in ResidualBlock(4).named_parameters()]
    assert len(names) == len(set(names)) == 2
