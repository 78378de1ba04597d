"""
Fake-quantization layers for quantization-aware training.

A :class:`FakeQuantLayer` keeps float32 master weights. Every forward pass
quantizes them (ternary or b-bit), runs the layer on the quantized weights
and scaled activations, and records the graph so the loss gradient reaches
the master weights through the straight-through estimator.

Forward results are bit-identical to the inference kernels for the same
master weights.
"""

import logging
from collections.abc import Sequence
from enum import Enum

import numpy as np
import numpy.typing as npt

from bitquant.config import CodecConfig, QuantConfig
from bitquant.errors import BackwardBeforeForwardError, ConfigError, ShapeMismatchError
from bitquant.format.records import LayerRecord, float_record, quantize_record
from bitquant.kernels.ternary_ops import Conv1dSpec, LayerSpec, LinearSpec
from bitquant.qat import autograd as ag
from bitquant.quant.quantizers import WeightQuantizer, get_quantizer
from bitquant.quant.tensors import FloatArray, QuantizedWeights

logger = logging.getLogger(__name__)


class QuantMode(Enum):
    """How a layer treats its weights in the forward pass."""

    TERNARY = "ternary"
    B_BIT = "b-bit"
    FLOAT = "float"

    @classmethod
    def for_config(cls, cfg: QuantConfig, float_weights: bool = False) -> "QuantMode":
        """
        Pick the mode matching a quantization config.

        Args:
            cfg: Quantization settings (ternary or integer bits)
            float_weights: Force the float baseline

        Returns:
            FLOAT, TERNARY or B_BIT
        """
        if float_weights:
            return cls.FLOAT
        return cls.TERNARY if cfg.is_ternary else cls.B_BIT


def init_weights(spec: LayerSpec, rng: np.random.Generator) -> FloatArray:
    """Uniform in [-k, k] with k = 1 / sqrt(fan_in)."""
    if isinstance(spec, LinearSpec):
        fan_in = spec.in_features
    else:
        fan_in = spec.c_in * spec.kernel_size
    k = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-k, k, size=spec.weight_shape).astype(np.float32)


class FakeQuantLayer:
    """
    Bias-free linear or conv1d layer with fake-quantized weights.

    Linear layers take ``(..., in_features)`` input, conv layers
    ``(N, c_in, T)``.

    Attributes:
        name: Layer name used in state dicts and archives
        spec: Layer geometry
        cfg: Quantization settings
        mode: Ternary, b-bit or float passthrough
        weights: float32 master weights
    """

    def __init__(
        self,
        name: str,
        spec: LayerSpec,
        cfg: QuantConfig,
        mode: QuantMode | None = None,
        *,
        weights: npt.ArrayLike | None = None,
        rng: np.random.Generator | None = None,
    ) -> None:
        self.name = name
        self.spec = spec
        self.cfg = cfg
        self.mode = mode or QuantMode.for_config(cfg)
        if self.mode is QuantMode.TERNARY and not cfg.is_ternary:
            raise ConfigError(f"layer {name}: ternary mode needs bits = 1.58")
        if self.mode is QuantMode.B_BIT and cfg.is_ternary:
            raise ConfigError(f"layer {name}: b-bit mode needs an integer bit width")
        self.quantizer: WeightQuantizer = get_quantizer(
            cfg, float_weights=self.mode is QuantMode.FLOAT
        )

        if weights is None:
            self.weights = init_weights(spec, rng or np.random.default_rng(0))
        else:
            w = np.array(weights, dtype=np.float32)
            if w.shape != spec.weight_shape:
                raise ShapeMismatchError(
                    f"layer {name}: weights {w.shape} do not match {spec.weight_shape}"
                )
            self.weights = w

        self._param: ag.Tensor | None = None
        self._weight_node: ag.Tensor | None = None

    def __repr__(self) -> str:
        return f"FakeQuantLayer({self.name!r}, {self.spec}, mode={self.mode.value})"

    @property
    def weight_name(self) -> str:
        """Key of the weights in state dicts and archives."""
        return f"{self.name}.weight"

    @property
    def channel_axis(self) -> int:
        return -1 if isinstance(self.spec, LinearSpec) else 1

    @property
    def grad(self) -> npt.NDArray[np.float64] | None:
        """Gradient of the master weights from the last backward pass."""
        return None if self._param is None else self._param.grad

    def zero_grad(self) -> None:
        if self._param is not None:
            self._param.zero_grad()

    def quantized(self) -> QuantizedWeights | None:
        """Quantize the current master weights (None in float mode)."""
        return self.quantizer.quantize(self.weights)

    def effective_weights(self) -> FloatArray:
        """Weights the forward pass actually uses (dequantized unless float)."""
        q = self.quantized()
        return self.weights.copy() if q is None else q.dequantize()

    def forward(self, x: ag.Tensor) -> ag.Tensor:
        """
        Record one forward pass on the tape.

        Every mode starts with the optional layer norm. Float mode then runs a plain
        linear or conv; quantized modes scale activations, use the dequantized
        weights behind a straight-through node and rescale like the inference kernels.

        Args:
            x: Input ``(N, in)`` for linear layers or ``(N, c_in, T)`` for conv layers

        Returns:
            float32-rounded output tensor
        """
        self._param = ag.Tensor(self.weights, requires_grad=True)
        h = x
        if self.cfg.layer_norm:
            h = ag.layer_norm(h, axis=self.channel_axis, eps=self.cfg.layer_norm_eps)

        q = self.quantized()
        if q is None:
            self._weight_node = self._param
            if isinstance(self.spec, LinearSpec):
                out = ag.linear(h, self._param)
            else:
                out = ag.conv1d(h, self._param, self.spec)
        else:
            a, gamma = ag.act_quant(h, self.cfg)
            self._weight_node = ag.ste_weight(self._param, q)
            bits = self.cfg.activation_bits
            if isinstance(self.spec, LinearSpec):
                out = ag.quant_linear(a, self._weight_node, q, gamma, bits)
            else:
                out = ag.quant_conv1d(a, self._weight_node, q, gamma, bits, self.spec)
        return ag.round_float32(out)

    __call__ = forward

    def to_layer_record(self, codec: CodecConfig) -> LayerRecord:
        """Quantize and wrap the weights as an archive record (float32 in float mode)."""
        if self.mode is QuantMode.FLOAT:
            return float_record(self.weight_name, self.weights, huffman=codec.huffman)
        return quantize_record(self.weight_name, self.weights, self.cfg, codec)


def fake_quant_forward(layer: FakeQuantLayer, x: npt.ArrayLike) -> FloatArray:
    """
    Run one fake-quantized forward pass and return the float32 output.

    Conv layers also accept a single ``(c_in, T)`` input.
    """
    xa = np.asarray(x, dtype=np.float32)
    squeeze = isinstance(layer.spec, Conv1dSpec) and xa.ndim == 2
    out = layer.forward(ag.Tensor(xa[None] if squeeze else xa)).data.astype(np.float32)
    return out[0] if squeeze else out


def ste_backward(layer: FakeQuantLayer, upstream_grad: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """
    Map the gradient w.r.t. the dequantized weights onto the master weights.

    The weight quantizer is treated as the identity, so the result equals
    ``upstream_grad``.

    Raises:
        BackwardBeforeForwardError: No forward pass has been recorded
        ShapeMismatchError: Gradient shape differs from the weights
    """
    node = layer._weight_node
    if node is None:
        raise BackwardBeforeForwardError(f"layer {layer.name}: backward called before forward")
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != layer.weights.shape:
        raise ShapeMismatchError(f"gradient {g.shape} does not match weights {layer.weights.shape}")
    if node.ctx is None:
        return g.copy()
    (grad_w,) = node.ctx.backward(g)
    assert grad_w is not None
    return grad_w


class Conv1dStack:
    """
    Stack of conv1d layers with ReLU between them and "same" padding.

    Example:
        >>> model = Conv1dStack([4, 16, 2], kernel_size=5, cfg=QuantConfig())
        >>> [layer.spec.weight_shape for layer in model.layers]
        [(16, 4, 5), (2, 16, 5)]
    """

    def __init__(
        self,
        channels: Sequence[int],
        kernel_size: int,
        cfg: QuantConfig,
        mode: QuantMode | None = None,
        *,
        seed: int = 0,
    ) -> None:
        if len(channels) < 2:
            raise ConfigError("a conv stack needs at least input and output channels")
        self.channels = list(channels)
        self.kernel_size = kernel_size
        self.cfg = cfg
        self.mode = mode or QuantMode.for_config(cfg)
        rng = np.random.default_rng(seed)
        self.layers = [
            FakeQuantLayer(
                f"conv{i}",
                Conv1dSpec(c_in, c_out, kernel_size, padding=kernel_size // 2),
                cfg,
                self.mode,
                rng=rng,
            )
            for i, (c_in, c_out) in enumerate(zip(self.channels[:-1], self.channels[1:]))
        ]

    def forward(self, x: ag.Tensor) -> ag.Tensor:
        h = x
        for i, layer in enumerate(self.layers):
            h = layer.forward(h)
            if i < len(self.layers) - 1:
                h = ag.relu(h)
        return h

    __call__ = forward

    def predict(self, x: npt.ArrayLike) -> FloatArray:
        """Forward pass without gradients, as a float32 array."""
        return self.forward(ag.Tensor(np.asarray(x, dtype=np.float32))).data.astype(np.float32)

    def parameters(self) -> list[FakeQuantLayer]:
        """Layers owning trainable master weights, in forward order."""
        return list(self.layers)

    @property
    def num_weights(self) -> int:
        return sum(layer.weights.size for layer in self.layers)

    def state_dict(self) -> dict[str, FloatArray]:
        """Copies of the master weights keyed by ``conv{i}.weight``."""
        return {layer.weight_name: layer.weights.copy() for layer in self.layers}

    def load_state_dict(self, state: dict[str, npt.ArrayLike]) -> None:
        """
        Replace the master weights.

        Raises:
            KeyError: A layer is missing from ``state``
            ShapeMismatchError: A tensor has the wrong shape
        """
        for layer in self.layers:
            w = np.array(state[layer.weight_name], dtype=np.float32)
            if w.shape != layer.weights.shape:
                raise ShapeMismatchError(f"{layer.name}: {w.shape} != {layer.weights.shape}")
            layer.weights = w

    def with_config(self, cfg: QuantConfig, mode: QuantMode | None = None) -> "Conv1dStack":
        """Copy of this model with the same weights under another quantization setting."""
        clone = Conv1dStack(self.channels, self.kernel_size, cfg, mode)
        clone.load_state_dict(self.state_dict())
        return clone

    def to_layer_records(self, codec: CodecConfig) -> list[LayerRecord]:
        """One archive record per layer, in forward order."""
        return [layer.to_layer_record(codec) for layer in self.layers]
