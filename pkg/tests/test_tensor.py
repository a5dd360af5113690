"""
Tests for the autograd tensor and its convolution primitives.
"""

import numpy as np
import pytest

from octave_codec.exceptions import ConfigError, ContractError
from octave_codec.tensor import (
    Tensor,
    avg_pool2,
    conv2d,
    default_dtype,
    get_default_dtype,
    no_grad,
    reflect_pad,
    separable_blur,
    set_default_dtype,
    tconv2d,
)


def _weighted(out, weights):
    """Scalar projection of a tensor-valued op: sum(out * weights)."""
    return (out * Tensor(weights)).sum()


class TestTensorBasics:
    """Tests for tensor construction and graph bookkeeping."""

    def test_default_dtype_is_float32(self):
        assert get_default_dtype() == np.float32
        assert Tensor([1.0, 2.0]).dtype == np.float32

    def test_default_dtype_context_restores(self):
        with default_dtype(np.float64):
            assert Tensor(1.0).dtype == np.float64
        assert get_default_dtype() == np.float32

    def test_rejects_integer_precision(self):
        with pytest.raises(ConfigError):
            set_default_dtype(np.int32)

    def test_item_needs_single_element(self):
        assert Tensor([[3.0]]).item() == 3.0
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()

    def test_backward_needs_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2.0).backward()

    def test_backward_needs_grad(self):
        with pytest.raises(ContractError):
            Tensor([1.0]).sum().backward()

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with no_grad():
            y = (x * x).sum()
        assert not y.requires_grad
        assert y.creator is None

    def test_broadcast_gradients(self, float64):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.arange(3.0), requires_grad=True)
        (a * b + b).sum().backward()
        np.testing.assert_allclose(a.grad, np.tile(np.arange(3.0), (2, 1)))
        np.testing.assert_allclose(b.grad, [4.0, 4.0, 4.0])

    def test_gradients_accumulate(self, float64):
        x = Tensor([2.0], requires_grad=True)
        (x * x).sum().backward()
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [8.0])
        x.zero_grad()
        assert x.grad is None

    def test_shared_subexpression(self, float64):
        """A node used twice receives both gradient contributions."""
        x = Tensor([3.0], requires_grad=True)
        y = x * x
        (y + y * 2.0).sum().backward()
        np.testing.assert_allclose(x.grad, [18.0])

    def test_elementwise_gradients(self, gradcheck, rng):
        a = rng.uniform(0.5, 2.0, size=(2, 3))
        b = rng.uniform(0.5, 2.0, size=(2, 3))
        w = rng.standard_normal((2, 3))

        def fn(x, y):
            z = x / y - y * x
            return _weighted(z.tanh() + x.sqrt() + x**-0.5, w) - y.mean()

        assert gradcheck(fn, a, b) < 1e-5


class TestConvolution:
    """Tests for conv2d, tconv2d and the padding/pooling primitives."""

    def test_conv_output_extent(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 8, 8)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        assert conv2d(x, w, stride=2, padding=1).shape == (1, 3, 4, 4)
        assert conv2d(x, w, stride=1, padding=1).shape == (1, 3, 8, 8)
        assert conv2d(x, w).shape == (1, 3, 6, 6)

    def test_conv_matches_direct_sum(self, float64, rng):
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((1, 2, 3, 3))
        out = conv2d(Tensor(x), Tensor(w)).data
        expected = (x[0, :, 1:4, 2:5] * w[0]).sum()
        assert out[0, 0, 1, 2] == pytest.approx(expected)

    def test_tconv_is_adjoint_of_conv(self, float64, rng):
        x = rng.standard_normal((1, 2, 8, 8))
        y = rng.standard_normal((1, 3, 4, 4))
        w = rng.standard_normal((3, 2, 3, 3))
        forward = conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
        adjoint = tconv2d(Tensor(y), Tensor(w), stride=2, padding=1, output_padding=1).data
        assert adjoint.shape == x.shape
        assert np.sum(forward * y) == pytest.approx(np.sum(x * adjoint))

    def test_tconv_rejects_large_output_padding(self, rng):
        y = Tensor(rng.standard_normal((1, 3, 4, 4)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        with pytest.raises(ConfigError):
            tconv2d(y, w, stride=2, padding=1, output_padding=2)

    def test_conv_channel_mismatch(self, rng):
        x = Tensor(rng.standard_normal((1, 4, 8, 8)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        with pytest.raises(ContractError):
            conv2d(x, w)

    def test_conv_gradients(self, gradcheck, rng):
        x = rng.standard_normal((1, 2, 6, 6))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        weights = rng.standard_normal((1, 3, 3, 3))

        def fn(x, w, b):
            return _weighted(conv2d(x, w, b, stride=2, padding=1), weights)

        assert gradcheck(fn, x, w, b) < 1e-5

    def test_tconv_gradients(self, gradcheck, rng):
        x = rng.standard_normal((1, 2, 3, 3))
        w = rng.standard_normal((2, 3, 3, 3))
        b = rng.standard_normal(3)
        weights = rng.standard_normal((1, 3, 6, 6))

        def fn(x, w, b):
            return _weighted(tconv2d(x, w, b, stride=2, padding=1, output_padding=1), weights)

        assert gradcheck(fn, x, w, b) < 1e-5

    def test_reflect_pad_matches_numpy(self, rng):
        x = rng.standard_normal((1, 2, 5, 6))
        out = reflect_pad(Tensor(x, dtype=np.float64), 3).data
        np.testing.assert_allclose(out, np.pad(x, ((0, 0), (0, 0), (3, 3), (3, 3)), mode="reflect"))

    def test_reflect_pad_needs_larger_extent(self, rng):
        with pytest.raises(ConfigError):
            reflect_pad(Tensor(rng.standard_normal((1, 1, 3, 8))), 3)

    def test_reflect_pad_gradients(self, gradcheck, rng):
        x = rng.standard_normal((1, 1, 5, 4))
        weights = rng.standard_normal((1, 1, 9, 8))
        assert gradcheck(lambda t: _weighted(reflect_pad(t, 2), weights), x) < 1e-5

    def test_avg_pool_drops_odd_edge(self, float64):
        x = Tensor(np.arange(25.0).reshape(1, 1, 5, 5))
        out = avg_pool2(x).data
        assert out.shape == (1, 1, 2, 2)
        assert out[0, 0, 0, 0] == pytest.approx((0 + 1 + 5 + 6) / 4)

    def test_pool_and_blur_gradients(self, gradcheck, rng):
        x = rng.standard_normal((1, 2, 7, 7))
        kernel = np.array([0.25, 0.5, 0.25])
        weights = rng.standard_normal((1, 2, 1, 1))

        def fn(t):
            return _weighted(separable_blur(avg_pool2(t), kernel), weights)

        assert gradcheck(fn, x) < 1e-5
