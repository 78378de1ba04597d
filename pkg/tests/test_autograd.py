"""
Tests for the reverse-mode gradient engine.
"""

import numpy as np
import pytest

from bitquant.config import QuantConfig
from bitquant.errors import ShapeMismatchError
from bitquant.kernels import Conv1dSpec, LinearSpec
from bitquant.qat import FakeQuantLayer
from bitquant.qat import autograd as ag
from bitquant.quant import quantize_ternary


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of the scalar function ``f`` at ``x``."""
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + h
        up = f(x)
        x[i] = orig - h
        down = f(x)
        x[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


class TestTensor:
    """Test graph bookkeeping."""

    def test_scalar_backward(self) -> None:
        """Test the default seed of a scalar output."""
        x = ag.Tensor([1.0, -2.0], requires_grad=True)
        ag.mse_loss(ag.relu(x), ag.Tensor([0.0, 0.0])).backward()
        assert x.grad is not None
        assert x.grad.tolist() == [1.0, 0.0]

    def test_non_scalar_needs_gradient(self) -> None:
        """Test that a vector output needs an explicit upstream gradient."""
        x = ag.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeMismatchError):
            ag.tanh(x).backward()

    def test_explicit_gradient_shape(self) -> None:
        """Test that the upstream gradient must match the output."""
        x = ag.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeMismatchError):
            ag.tanh(x).backward([1.0])

    def test_shared_input_accumulates(self) -> None:
        """Test that a tensor used twice receives both contributions."""
        x = ag.Tensor([3.0], requires_grad=True)
        (x + x).backward([1.0])
        assert x.grad is not None
        assert x.grad.tolist() == [2.0]

    def test_constants_get_no_grad(self) -> None:
        """Test that tensors without requires_grad stay untouched."""
        x = ag.Tensor([1.0, 2.0])
        w = ag.Tensor([[1.0, 1.0]], requires_grad=True)
        ag.mse_loss(ag.linear(x, w), ag.Tensor([0.0])).backward()
        assert x.grad is None
        assert w.grad is not None

    def test_round_float32_passes_gradient(self) -> None:
        """Test that float32 rounding is transparent to gradients."""
        x = ag.Tensor([0.1, 0.2], requires_grad=True)
        y = ag.round_float32(x)
        assert y.data.tolist() == [float(np.float32(0.1)), float(np.float32(0.2))]
        y.backward([1.0, 1.0])
        assert x.grad is not None
        assert x.grad.tolist() == [1.0, 1.0]


class TestGradientCheck:
    """Test analytic gradients against central differences."""

    def test_conv_network(self, rng: np.random.Generator) -> None:
        """Test layer norm -> conv -> tanh -> conv -> MSE on 100 random networks."""
        spec1 = Conv1dSpec(2, 3, 3, padding=1)
        spec2 = Conv1dSpec(3, 2, 3, stride=2)
        for _ in range(100):
            x = rng.standard_normal((2, 2, 6))
            w1 = rng.standard_normal(spec1.weight_shape) * 0.5
            w2 = rng.standard_normal(spec2.weight_shape) * 0.5
            target = rng.standard_normal((2, 2, spec2.output_length(6)))

            def loss(xv: np.ndarray, w1v: np.ndarray, w2v: np.ndarray) -> ag.Tensor:
                h = ag.layer_norm(ag.Tensor(xv, requires_grad=True), axis=1)
                h = ag.tanh(ag.conv1d(h, ag.Tensor(w1v, requires_grad=True), spec1))
                return ag.mse_loss(ag.conv1d(h, ag.Tensor(w2v, requires_grad=True), spec2),
                                   ag.Tensor(target))

            xt = ag.Tensor(x, requires_grad=True)
            w1t = ag.Tensor(w1, requires_grad=True)
            w2t = ag.Tensor(w2, requires_grad=True)
            h = ag.tanh(ag.conv1d(ag.layer_norm(xt, axis=1), w1t, spec1))
            ag.mse_loss(ag.conv1d(h, w2t, spec2), ag.Tensor(target)).backward()

            expected_x = numeric_grad(lambda v: float(loss(v, w1, w2).data), x.copy())
            expected_w1 = numeric_grad(lambda v: float(loss(x, v, w2).data), w1.copy())
            expected_w2 = numeric_grad(lambda v: float(loss(x, w1, v).data), w2.copy())
            np.testing.assert_allclose(xt.grad, expected_x, rtol=1e-5, atol=1e-7)
            np.testing.assert_allclose(w1t.grad, expected_w1, rtol=1e-5, atol=1e-7)
            np.testing.assert_allclose(w2t.grad, expected_w2, rtol=1e-5, atol=1e-7)

    def test_linear_relu(self, rng: np.random.Generator) -> None:
        """Test a batched linear layer with ReLU."""
        x = rng.standard_normal((4, 5))
        w = rng.standard_normal((3, 5))
        target = rng.standard_normal((4, 3))

        def f(wv: np.ndarray) -> float:
            return float(ag.mse_loss(ag.relu(ag.linear(ag.Tensor(x), ag.Tensor(wv))),
                                     ag.Tensor(target)).data)

        wt = ag.Tensor(w, requires_grad=True)
        ag.mse_loss(ag.relu(ag.linear(ag.Tensor(x), wt)), ag.Tensor(target)).backward()
        np.testing.assert_allclose(wt.grad, numeric_grad(f, w.copy()), rtol=1e-5, atol=1e-7)


class TestQuantizedSurrogate:
    """Test the gradients flowing through quantized layers."""

    def test_weight_gradient(self, rng: np.random.Generator) -> None:
        """Test the weight grad equals that of linear(a * gamma / Q_p, W) at W = W_deq."""
        cfg = QuantConfig()
        x = rng.standard_normal((3, 6))
        target = rng.standard_normal((3, 4))
        q = quantize_ternary(rng.standard_normal((4, 6)))
        a, gamma = ag.act_quant(ag.Tensor(x), cfg)
        param = ag.Tensor(q.values.astype(np.float64), requires_grad=True)
        w_deq = ag.ste_weight(param, q)
        ag.mse_loss(ag.quant_linear(a, w_deq, q, gamma, 8), ag.Tensor(target)).backward()

        descaled = a.data * gamma / 128.0

        def f(wv: np.ndarray) -> float:
            return float(ag.mse_loss(ag.linear(ag.Tensor(descaled), ag.Tensor(wv)),
                                     ag.Tensor(target)).data)

        w0 = q.values.astype(np.float64) * q.beta
        np.testing.assert_allclose(param.grad, numeric_grad(f, w0), rtol=1e-5, atol=1e-8)

    def test_input_gradient(self, rng: np.random.Generator, raw_quant_config: QuantConfig) -> None:
        """Test that the input grad is g @ W_deq without layer norm."""
        spec = LinearSpec(5, 3)
        layer = FakeQuantLayer("fc", spec, raw_quant_config, rng=rng)
        x = ag.Tensor(rng.standard_normal((2, 5)), requires_grad=True)
        target = rng.standard_normal((2, 3))
        y = layer.forward(x)
        ag.mse_loss(y, ag.Tensor(target)).backward()
        g = 2.0 * (y.data - target) / y.data.size
        q = layer.quantized()
        assert q is not None
        expected = g @ (q.values.astype(np.float64) * q.beta)
        np.testing.assert_allclose(x.grad, expected, rtol=1e-10, atol=1e-12)

    def test_conv_weight_gradient(self, rng: np.random.Generator) -> None:
        """Test the quantized conv weight grad against the descaled float conv."""
        cfg = QuantConfig()
        spec = Conv1dSpec(2, 2, 3, padding=1)
        x = rng.standard_normal((1, 2, 5))
        target = rng.standard_normal((1, 2, 5))
        q = quantize_ternary(rng.standard_normal(spec.weight_shape))
        a, gamma = ag.act_quant(ag.Tensor(x), cfg)
        param = ag.Tensor(q.values.astype(np.float64), requires_grad=True)
        out = ag.quant_conv1d(a, ag.ste_weight(param, q), q, gamma, 8, spec)
        ag.mse_loss(out, ag.Tensor(target)).backward()

        descaled = a.data * gamma / 128.0

        def f(wv: np.ndarray) -> float:
            return float(ag.mse_loss(ag.conv1d(ag.Tensor(descaled), ag.Tensor(wv), spec),
                                     ag.Tensor(target)).data)

        w0 = q.values.astype(np.float64) * q.beta
        np.testing.assert_allclose(param.grad, numeric_grad(f, w0), rtol=1e-5, atol=1e-8)


class TestShapeErrors:
    """Test shape validation inside graph operations."""

    def test_add_shapes(self) -> None:
        """Test that add needs equal shapes."""
        with pytest.raises(ShapeMismatchError):
            ag.add(ag.Tensor([1.0]), ag.Tensor([1.0, 2.0]))

    def test_mse_shapes(self) -> None:
        """Test that prediction and target must match."""
        with pytest.raises(ShapeMismatchError):
            ag.mse_loss(ag.Tensor([1.0]), ag.Tensor([1.0, 2.0]))

    def test_conv_input_rank(self) -> None:
        """Test that the engine's conv needs batched input."""
        spec = Conv1dSpec(1, 1, 1)
        with pytest.raises(ShapeMismatchError):
            ag.conv1d(ag.Tensor(np.ones((1, 4))), ag.Tensor(np.ones(spec.weight_shape)), spec)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
