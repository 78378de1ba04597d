"""
Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a float64 array and remembers the :class:`Function`
that produced it. Calling :meth:`Tensor.backward` on a scalar walks the graph
in reverse topological order and accumulates ``grad`` on every tensor that
requires it.

Only the operations needed by small linear/conv1d stacks are provided. The
quantized operations reuse the inference kernels' helpers, so a forward pass
through this engine produces the same numbers as the kernels.

Example:
    >>> x = Tensor([1.0, -2.0], requires_grad=True)
    >>> y = mse_loss(relu(x), Tensor([0.0, 0.0]))
    >>> y.backward()
    >>> x.grad.tolist()
    [1.0, 0.0]
"""

from typing import Any

import numpy as np
import numpy.typing as npt

from bitquant.config import QuantConfig
from bitquant.errors import ShapeMismatchError
from bitquant.kernels.ternary_ops import Conv1dSpec, accumulate, col2im, im2col
from bitquant.quant.quantizers import layer_norm64, quantize_activation, rescale_output
from bitquant.quant.tensors import Float64Array, QuantizedWeights

Array = Float64Array


class Tensor:
    """
    Array node of the computation graph.

    Attributes:
        data: Values (float64)
        grad: Accumulated gradient of the last backward pass, or None
        requires_grad: Whether gradients are kept for this tensor
    """

    def __init__(
        self,
        data: npt.ArrayLike,
        requires_grad: bool = False,
        ctx: "Function | None" = None,
    ) -> None:
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self.ctx = ctx

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def numpy(self) -> Array:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: npt.ArrayLike | None = None) -> None:
        """
        Back-propagate from this tensor.

        Args:
            grad: Upstream gradient; defaults to 1 for scalar tensors
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatchError("backward without a gradient needs a scalar tensor")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(grad, dtype=np.float64)
            if seed.shape != self.data.shape:
                raise ShapeMismatchError(f"gradient {seed.shape} does not match {self.shape}")

        order = _toposort(self)
        grads: dict[int, Array] = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node.ctx is None:
                continue
            for parent, pg in zip(node.ctx.parents, node.ctx.backward(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t.ctx is not None


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.ctx is not None:
            for parent in node.ctx.parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
    return order


class Function:
    """Base class of graph operations: ``forward`` on arrays, ``backward`` on grads."""

    def __init__(self, *parents: Tensor) -> None:
        self.parents = parents

    @classmethod
    def apply(cls, *parents: Tensor, **kwargs: Any) -> Tensor:
        ctx = cls(*parents)
        out = ctx.forward(*[p.data for p in parents], **kwargs)
        track = any(_needs_grad(p) for p in parents)
        return Tensor(out, ctx=ctx if track else None)

    def forward(self, *args: Any, **kwargs: Any) -> Array:
        raise NotImplementedError

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        raise NotImplementedError


def _round_f32(x: Array) -> Array:
    return x.astype(np.float32).astype(np.float64)


# --- elementwise --------------------------------------------------------------


class Add(Function):
    def forward(self, a: Array, b: Array) -> Array:
        if a.shape != b.shape:
            raise ShapeMismatchError(f"add needs equal shapes, got {a.shape} and {b.shape}")
        return a + b

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return grad, grad


class ReLU(Function):
    def forward(self, x: Array) -> Array:
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (grad * self.mask,)


class Tanh(Function):
    def forward(self, x: Array) -> Array:
        self.y = np.tanh(x)
        return self.y

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (grad * (1.0 - self.y**2),)


class RoundFloat32(Function):
    """Round values to float32 precision; the gradient passes unchanged."""

    def forward(self, x: Array) -> Array:
        return _round_f32(x)

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (grad,)


# --- normalization and activation scaling ------------------------------------


class LayerNorm(Function):
    def forward(self, x: Array, axis: int = -1, eps: float = 1e-5) -> Array:
        self.axis = axis
        self.sigma = np.sqrt(x.var(axis=axis, keepdims=True) + eps)
        self.y = layer_norm64(x, axis, eps)
        return self.y

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        mean_g = grad.mean(axis=self.axis, keepdims=True)
        mean_gy = (grad * self.y).mean(axis=self.axis, keepdims=True)
        return ((grad - mean_g - self.y * mean_gy) / self.sigma,)


class ActQuant(Function):
    """
    Activation scaling x~ = Clip(x Q_p / gamma, ...).

    gamma is a constant of the forward pass and the clip passes gradients.
    """

    def forward(self, x: Array, cfg: QuantConfig | None = None) -> Array:
        cfg = cfg or QuantConfig()
        act = quantize_activation(x, cfg)
        self.gamma = act.gamma
        self.bits = act.bits
        self.scale = act.q_p / max(act.gamma, cfg.epsilon)
        return act.values

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (grad * self.scale,)


class STEWeight(Function):
    """
    Weight-quantization node: forward yields the dequantized weights, backward
    is the identity on the upstream gradient.
    """

    def forward(self, w: Array, quantized: QuantizedWeights | None = None) -> Array:
        if quantized is None:
            raise ValueError("ste_weight needs the quantized weights")
        if quantized.shape != w.shape:
            raise ShapeMismatchError(f"quantized shape {quantized.shape} != master {w.shape}")
        return quantized.values.astype(np.float64) * quantized.beta

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (grad,)


# --- layers -------------------------------------------------------------------


def _reduce_batch(grad: Array, x: Array) -> Array:
    # sum over leading batch dims of grad^T x
    return grad.reshape(-1, grad.shape[-1]).T @ x.reshape(-1, x.shape[-1])


class Linear(Function):
    def forward(self, x: Array, w: Array) -> Array:
        if w.ndim != 2 or x.shape[-1] != w.shape[1]:
            raise ShapeMismatchError(f"input {x.shape} incompatible with weights {w.shape}")
        self.x, self.w = x, w
        return accumulate(x, w)

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return grad @ self.w, _reduce_batch(grad, self.x)


class Conv1d(Function):
    def forward(self, x: Array, w: Array, spec: Conv1dSpec | None = None) -> Array:
        assert spec is not None
        _check_conv(x, w, spec)
        self.spec, self.length = spec, x.shape[2]
        self.cols = im2col(x, spec)
        self.w = w.reshape(spec.c_out, -1)
        return accumulate(self.cols, self.w).transpose(0, 2, 1)

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        g = grad.transpose(0, 2, 1)
        gx = col2im(g @ self.w, self.spec, self.length)
        gw = _reduce_batch(g, self.cols).reshape(self.spec.weight_shape)
        return gx, gw


def _check_conv(x: Array, w: Array, spec: Conv1dSpec) -> None:
    if x.ndim != 3 or x.shape[1] != spec.c_in:
        raise ShapeMismatchError(f"conv1d input must be (N, {spec.c_in}, T), got {x.shape}")
    if w.shape != spec.weight_shape:
        raise ShapeMismatchError(f"weight shape {w.shape} does not match {spec.weight_shape}")
    if spec.output_length(x.shape[2]) < 1:
        raise ShapeMismatchError(f"sequence of length {x.shape[2]} too short for {spec}")


class QuantLinear(Function):
    """
    y = (W~ x~) gamma beta / Q_p on scaled activations and STE weights.

    The second parent carries the dequantized weights; its gradient is the
    gradient w.r.t. those dequantized weights.
    """

    def forward(
        self,
        a: Array,
        w_deq: Array,
        quantized: QuantizedWeights | None = None,
        gamma: float = 1.0,
        bits: int = 8,
    ) -> Array:
        assert quantized is not None
        if a.shape[-1] != quantized.shape[1]:
            raise ShapeMismatchError(f"input {a.shape} incompatible with weights {quantized.shape}")
        self.a = a
        self.w_int = quantized.values.astype(np.float64)
        q_p = float(2 ** (bits - 1))
        self.a_scale = gamma / q_p
        self.out_scale = gamma * quantized.beta / q_p
        return rescale_output(accumulate(a, self.w_int), gamma, quantized.beta, bits)

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        ga = (grad @ self.w_int) * self.out_scale
        gw = _reduce_batch(grad, self.a) * self.a_scale
        return ga, gw


class QuantConv1d(Function):
    def forward(
        self,
        a: Array,
        w_deq: Array,
        quantized: QuantizedWeights | None = None,
        gamma: float = 1.0,
        bits: int = 8,
        spec: Conv1dSpec | None = None,
    ) -> Array:
        assert quantized is not None and spec is not None
        _check_conv(a, w_deq, spec)
        self.spec, self.length = spec, a.shape[2]
        self.cols = im2col(a, spec)
        self.w_int = quantized.values.astype(np.float64).reshape(spec.c_out, -1)
        q_p = float(2 ** (bits - 1))
        self.a_scale = gamma / q_p
        self.out_scale = gamma * quantized.beta / q_p
        y_tilde = accumulate(self.cols, self.w_int).transpose(0, 2, 1)
        return rescale_output(y_tilde, gamma, quantized.beta, bits)

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        g = grad.transpose(0, 2, 1)
        ga = col2im(g @ self.w_int, self.spec, self.length) * self.out_scale
        gw = _reduce_batch(g, self.cols).reshape(self.spec.weight_shape) * self.a_scale
        return ga, gw


class MSELoss(Function):
    def forward(self, pred: Array, target: Array) -> Array:
        if pred.shape != target.shape:
            raise ShapeMismatchError(f"prediction {pred.shape} vs target {target.shape}")
        self.diff = pred - target
        return np.asarray(np.mean(self.diff**2))

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        g = grad * 2.0 * self.diff / self.diff.size
        return g, -g


# --- functional API -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0); the gradient is 1 where x > 0."""
    return ReLU.apply(x)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def round_float32(x: Tensor) -> Tensor:
    """Round values to float32 precision; the gradient passes unchanged."""
    return RoundFloat32.apply(x)


def layer_norm(x: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Parameter-free layer normalization over ``axis``, differentiated exactly."""
    return LayerNorm.apply(x, axis=axis, eps=eps)


def act_quant(x: Tensor, cfg: QuantConfig) -> tuple[Tensor, float]:
    """
    Scale activations into (-Q_p, Q_p).

    Returns:
        The scaled tensor and the gamma used, needed to rescale the layer output
    """
    ctx = ActQuant(x)
    values = ctx.forward(x.data, cfg=cfg)
    return Tensor(values, ctx=ctx if _needs_grad(x) else None), ctx.gamma


def ste_weight(w: Tensor, quantized: QuantizedWeights) -> Tensor:
    """
    Swap master weights for their dequantized values in the forward pass.

    Backward is the identity on the upstream gradient (straight-through estimator).

    Args:
        w: Float master weights
        quantized: Quantization of ``w`` with the same shape
    """
    return STEWeight.apply(w, quantized=quantized)


def linear(x: Tensor, w: Tensor) -> Tensor:
    return Linear.apply(x, w)


def conv1d(x: Tensor, w: Tensor, spec: Conv1dSpec) -> Tensor:
    return Conv1d.apply(x, w, spec=spec)


def quant_linear(
    a: Tensor, w_deq: Tensor, quantized: QuantizedWeights, gamma: float, bits: int
) -> Tensor:
    """
    Linear layer on scaled activations and quantized weights, rescaled by gamma * beta / Q_p.

    The forward value is computed from the integer weights through the inference
    accumulation; the backward pass treats it as ``a @ w_deq.T * gamma / Q_p``.
    """
    return QuantLinear.apply(a, w_deq, quantized=quantized, gamma=gamma, bits=bits)


def quant_conv1d(
    a: Tensor,
    w_deq: Tensor,
    quantized: QuantizedWeights,
    gamma: float,
    bits: int,
    spec: Conv1dSpec,
) -> Tensor:
    """Conv1d counterpart of :func:`quant_linear`."""
    return QuantConv1d.apply(a, w_deq, quantized=quantized, gamma=gamma, bits=bits, spec=spec)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements, as a scalar tensor."""
    return MSELoss.apply(pred, target)
