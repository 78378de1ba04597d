"""
Training, evaluation and post-training quantization.

``train`` runs minibatch SGD with momentum on a :class:`Conv1dStack` under
mean squared error. Runs are fully determined by ``TrainConfig.seed``.
``ptq_quantize`` turns a trained model into a :class:`QuantizedModel`, whose
inference goes through the kernels instead of the gradient engine.
"""

import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import numpy.typing as npt

from bitquant.config import CodecConfig, QuantConfig, TrainConfig
from bitquant.errors import ShapeMismatchError, TrainingDivergedError
from bitquant.format.records import (
    LayerRecord,
    float_record,
    int4_record,
    int8_record,
    ternary_record,
)
from bitquant.kernels.ternary_ops import Conv1dSpec, layer_forward
from bitquant.qat import autograd as ag
from bitquant.qat.layers import Conv1dStack, FakeQuantLayer, QuantMode
from bitquant.quant.quantizers import quantize_weights
from bitquant.quant.tensors import FloatArray, IntQuantTensor, QuantizedWeights, TernaryTensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Paired inputs ``(N, c_in, T)`` and targets ``(N, c_out, T)``."""

    inputs: FloatArray
    targets: FloatArray

    def __post_init__(self) -> None:
        if len(self.inputs) != len(self.targets):
            raise ShapeMismatchError(
                f"{len(self.inputs)} inputs but {len(self.targets)} targets"
            )

    def __len__(self) -> int:
        return len(self.inputs)


class Predictor(Protocol):
    def predict(self, x: npt.ArrayLike) -> FloatArray: ...


class SGD:
    """
    Stochastic gradient descent with heavy-ball momentum.

    v <- momentum * v + g;  w <- w - lr * v

    Updates are computed in float64 and stored back as float32 master weights.
    """

    def __init__(
        self,
        layers: list[FakeQuantLayer],
        learning_rate: float,
        momentum: float = 0.9,
        grad_clip: float | None = None,
    ) -> None:
        """
        Initialize optimizer.

        Args:
            layers: Layers whose master weights are updated
            learning_rate: Step size
            momentum: Velocity decay; 0.0 gives plain SGD
            grad_clip: Global L2 norm above which gradients are rescaled
        """
        self.layers = layers
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.grad_clip = grad_clip
        self.velocity = [np.zeros(layer.weights.shape, dtype=np.float64) for layer in layers]

    def zero_grad(self) -> None:
        """Clear the gradients of every layer."""
        for layer in self.layers:
            layer.zero_grad()

    def _grads(self) -> list[npt.NDArray[np.float64]]:
        grads: list[npt.NDArray[np.float64]] = []
        for layer in self.layers:
            g = layer.grad
            grads.append(np.zeros(layer.weights.shape) if g is None else g)
        if self.grad_clip is not None:
            norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
            if norm > self.grad_clip:
                grads = [g * (self.grad_clip / norm) for g in grads]
        return grads

    def step(self) -> None:
        """Apply one momentum update from the gradients of the last backward pass."""
        for layer, v, g in zip(self.layers, self.velocity, self._grads()):
            v *= self.momentum
            v += g
            layer.weights = (layer.weights.astype(np.float64) - self.learning_rate * v).astype(
                np.float32
            )


@dataclass
class TrainResult:
    """Trained model and its per-step loss trace."""

    model: Conv1dStack
    losses: list[float] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.losses)

    @property
    def final_loss(self) -> float:
        """Loss of the last step, NaN when no step ran."""
        return self.losses[-1] if self.losses else float("nan")


def train(model: Conv1dStack, data: Dataset, cfg: TrainConfig) -> TrainResult:
    """
    Train ``model`` in place on minibatches drawn from ``data``.

    Args:
        model: Model to train (its mode decides float, ternary or b-bit)
        data: Training set
        cfg: Steps, batch size, learning rate, momentum and seed

    Returns:
        TrainResult holding the model and one loss value per step

    Raises:
        TrainingDivergedError: The loss or the weights became NaN or infinite
    """
    rng = np.random.default_rng(cfg.seed)
    optimizer = SGD(model.parameters(), cfg.learning_rate, cfg.momentum, cfg.grad_clip)
    result = TrainResult(model=model)
    batch = min(cfg.batch_size, len(data))

    for step in range(cfg.steps):
        idx = rng.choice(len(data), size=batch, replace=False)
        pred = model.forward(ag.Tensor(data.inputs[idx]))
        loss = ag.mse_loss(pred, ag.Tensor(data.targets[idx]))
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDivergedError(step, value)

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if not all(np.all(np.isfinite(layer.weights)) for layer in model.layers):
            raise TrainingDivergedError(step, value)
        result.losses.append(value)

        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            logger.info("step %d/%d loss=%.6g (%s)", step + 1, cfg.steps, value, model.mode.value)

    return result


def evaluate(model: Predictor, data: Dataset) -> float:
    """Mean squared error of ``model`` on ``data``, in float64."""
    pred = np.asarray(model.predict(data.inputs), dtype=np.float64)
    return float(np.mean((pred - data.targets.astype(np.float64)) ** 2))


class QuantizedModel:
    """
    Inference-only conv stack on quantized (or float) weights.

    Every layer runs through the kernels; ReLU sits between layers.
    """

    def __init__(
        self,
        names: list[str],
        specs: list[Conv1dSpec],
        weights: list[QuantizedWeights | FloatArray],
        cfg: QuantConfig,
    ) -> None:
        if not len(names) == len(specs) == len(weights):
            raise ShapeMismatchError("names, specs and weights must have equal length")
        self.names = names
        self.specs = specs
        self.weights = weights
        self.cfg = cfg

    def predict(self, x: npt.ArrayLike) -> FloatArray:
        """Run every layer through the inference kernels with ReLU in between."""
        h = np.asarray(x, dtype=np.float32)
        for i, (spec, w) in enumerate(zip(self.specs, self.weights)):
            h = layer_forward(h, spec, w, self.cfg)
            if i < len(self.specs) - 1:
                h = np.maximum(h, np.float32(0.0))
        return h

    def dequantized(self) -> list[FloatArray]:
        """Float32 weights each layer effectively uses."""
        return [
            w.dequantize() if isinstance(w, (TernaryTensor, IntQuantTensor)) else w.copy()
            for w in self.weights
        ]

    def to_layer_records(self, codec: CodecConfig) -> list[LayerRecord]:
        """
        Wrap the quantized weights as archive records without re-quantizing.

        Args:
            codec: Block size, indexing, int4 storage and Huffman settings
        """
        records: list[LayerRecord] = []
        for name, w in zip(self.names, self.weights):
            if isinstance(w, TernaryTensor):
                records.append(
                    ternary_record(
                        name,
                        w,
                        block_size=codec.block_size,
                        indexing=codec.indexing,
                        huffman=codec.huffman,
                    )
                )
            elif isinstance(w, IntQuantTensor):
                if w.bits <= 4 and codec.int4_storage == "nibble":
                    records.append(int4_record(name, w, huffman=codec.huffman))
                else:
                    records.append(int8_record(name, w.values, w.beta, huffman=codec.huffman))
            else:
                records.append(float_record(name, w, huffman=codec.huffman))
        return records


def _conv_specs(model: Conv1dStack) -> list[Conv1dSpec]:
    specs = [layer.spec for layer in model.layers]
    return [s for s in specs if isinstance(s, Conv1dSpec)]


def ptq_quantize(model: Conv1dStack, cfg: QuantConfig) -> QuantizedModel:
    """
    Quantize a trained model's weights without further training.

    Each layer's float32 master weights are replaced by their ternary or b-bit
    quantization under ``cfg``.
    """
    weights: list[QuantizedWeights | FloatArray] = [
        quantize_weights(layer.weights, cfg) for layer in model.layers
    ]
    logger.info("post-training quantized %d layers to %s bits", len(weights), cfg.bits)
    return QuantizedModel(
        names=[layer.weight_name for layer in model.layers],
        specs=_conv_specs(model),
        weights=weights,
        cfg=cfg,
    )


def inference_model(model: Conv1dStack) -> QuantizedModel:
    """Kernel-backed copy of a model in its own mode (float layers stay float)."""
    if model.mode is QuantMode.FLOAT:
        return QuantizedModel(
            names=[layer.weight_name for layer in model.layers],
            specs=_conv_specs(model),
            weights=[layer.weights.copy() for layer in model.layers],
            cfg=model.cfg,
        )
    return ptq_quantize(model, model.cfg)
