"""
Quantized forward computation for linear and 1-D convolution layers.

Every layer runs the same pipeline:

1. layer normalization over the channel/feature axis (optional)
2. activation scaling by gamma = max |x| into (-Q_p, Q_p)
3. y~ = f(W~, x~) with integer weights
4. rescaling y = y~ * gamma * beta / Q_p

Ternary weights are multiplied by {-1, 0, 1} only, so step 3 is pure
add/sub/skip. Accumulation runs in float64 along the reduction axis in a fixed
order; dense, packed and K=1 convolution paths therefore produce bit-identical
float32 results.

Shapes:
    linear: x ``(..., in_features)``, W ``(out_features, in_features)``
    conv1d: x ``(c_in, T)`` or ``(N, c_in, T)``, W ``(c_out, c_in, K)``
"""

import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view

from bitquant.codec.index_codec import PackedWeights, decode
from bitquant.config import QuantConfig
from bitquant.errors import ShapeMismatchError
from bitquant.quant.quantizers import layer_norm64, quantize_activation, rescale_output
from bitquant.quant.tensors import (
    Float64Array,
    FloatArray,
    IntQuantTensor,
    QuantizedWeights,
    TernaryTensor,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearSpec:
    """Bias-free linear layer: W has shape (out_features, in_features)."""

    in_features: int
    out_features: int

    def __post_init__(self) -> None:
        if self.in_features < 1 or self.out_features < 1:
            raise ShapeMismatchError(f"linear features must be positive: {self}")

    @property
    def weight_shape(self) -> tuple[int, int]:
        """Weight layout ``(out, in)``."""
        return (self.out_features, self.in_features)


@dataclass(frozen=True)
class Conv1dSpec:
    """
    Bias-free 1-D convolution (cross-correlation).

    Attributes:
        c_in: Input channels
        c_out: Output channels
        kernel_size: Taps per channel (K)
        stride: Step between output positions
        padding: Zeros added on both ends of the time axis
    """

    c_in: int
    c_out: int
    kernel_size: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        if min(self.c_in, self.c_out, self.kernel_size, self.stride) < 1 or self.padding < 0:
            raise ShapeMismatchError(f"invalid convolution spec: {self}")

    @property
    def weight_shape(self) -> tuple[int, int, int]:
        """Weight layout ``(c_out, c_in, K)``."""
        return (self.c_out, self.c_in, self.kernel_size)

    def output_length(self, length: int) -> int:
        """T_out = floor((T + 2 * padding - K) / stride) + 1."""
        return (length + 2 * self.padding - self.kernel_size) // self.stride + 1


LayerSpec = LinearSpec | Conv1dSpec


# --- shared helpers -----------------------------------------------------------


def accumulate(cols: Float64Array, weights: Float64Array) -> Float64Array:
    """
    Compute ``cols @ weights.T`` one reduction step at a time.

    ``cols`` is ``(..., R)`` and ``weights`` ``(out, R)``. The fixed
    sequential order makes the result independent of the batch layout.
    """
    out = np.zeros(cols.shape[:-1] + (weights.shape[0],), dtype=np.float64)
    for r in range(weights.shape[1]):
        out += cols[..., r : r + 1] * weights[:, r]
    return out


def _as_input(x: npt.ArrayLike) -> Float64Array:
    arr = np.asarray(x, dtype=np.float32)
    if arr.size == 0:
        raise ShapeMismatchError("empty input tensor")
    if not np.all(np.isfinite(arr)):
        raise ShapeMismatchError("input contains non-finite values")
    return arr.astype(np.float64)


def _normalize(x: Float64Array, axis: int, cfg: QuantConfig) -> Float64Array:
    if not cfg.layer_norm:
        return x
    return layer_norm64(x, axis, cfg.layer_norm_eps)


def _integer_weights(weights: QuantizedWeights) -> Float64Array:
    return np.ascontiguousarray(weights.values, dtype=np.float64)


def _conv_batch(x: Float64Array, spec: Conv1dSpec) -> tuple[Float64Array, bool]:
    if x.ndim not in (2, 3):
        raise ShapeMismatchError(f"conv1d input must be (c_in, T) or (N, c_in, T), got {x.shape}")
    squeeze = x.ndim == 2
    batch = x[None] if squeeze else x
    if batch.shape[1] != spec.c_in:
        raise ShapeMismatchError(f"conv1d expects {spec.c_in} input channels, got {batch.shape[1]}")
    if spec.output_length(batch.shape[2]) < 1:
        raise ShapeMismatchError(
            f"sequence of length {batch.shape[2]} too short for kernel {spec.kernel_size} "
            f"(padding {spec.padding})"
        )
    return batch, squeeze


def im2col(x: Float64Array, spec: Conv1dSpec) -> Float64Array:
    """
    Unfold ``(N, c_in, T)`` into ``(N, T_out, c_in * K)`` windows.

    Padding zeros are inserted here, i.e. after any activation scaling.
    """
    if spec.padding:
        x = np.pad(x, ((0, 0), (0, 0), (spec.padding, spec.padding)))
    windows = sliding_window_view(x, spec.kernel_size, axis=2)[:, :, :: spec.stride, :]
    n, c_in, t_out, k = windows.shape
    return np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(n, t_out, c_in * k)


def col2im(cols: Float64Array, spec: Conv1dSpec, length: int) -> Float64Array:
    """
    Adjoint of :func:`im2col`: scatter-add ``(N, T_out, c_in * K)`` windows
    back onto an ``(N, c_in, length)`` signal, dropping the padding.
    """
    n, t_out, _ = cols.shape
    k_size = spec.kernel_size
    windows = cols.reshape(n, t_out, spec.c_in, k_size).transpose(0, 2, 1, 3)
    padded = np.zeros((n, spec.c_in, length + 2 * spec.padding), dtype=np.float64)
    span = spec.stride * (t_out - 1) + 1
    for k in range(k_size):
        padded[:, :, k : k + span : spec.stride] += windows[:, :, :, k]
    return padded[:, :, spec.padding : spec.padding + length]


def _check_weights(shape: tuple[int, ...], expected: tuple[int, ...]) -> None:
    if tuple(shape) != tuple(expected):
        raise ShapeMismatchError(f"weight shape {tuple(shape)} does not match {tuple(expected)}")


# --- quantized layers ---------------------------------------------------------


def quantized_linear_forward(
    x: npt.ArrayLike, weights: QuantizedWeights, cfg: QuantConfig
) -> FloatArray:
    """
    Linear layer on quantized weights: y = (W~ x~) gamma beta / Q_p.

    Args:
        x: Input of shape (..., in_features)
        weights: Ternary or b-bit weights of shape (out_features, in_features)
        cfg: Activation precision, epsilon and layer-norm settings

    Raises:
        ShapeMismatchError: Incompatible shapes
    """
    xa = _as_input(x)
    if weights.values.ndim != 2:
        raise ShapeMismatchError(f"linear weights must be 2-D, got {weights.shape}")
    if xa.shape[-1] != weights.shape[1]:
        raise ShapeMismatchError(
            f"input features {xa.shape[-1]} do not match weight shape {weights.shape}"
        )
    act = quantize_activation(_normalize(xa, -1, cfg), cfg)
    y_tilde = accumulate(act.values, _integer_weights(weights))
    return rescale_output(y_tilde, act.gamma, weights.beta, act.bits).astype(np.float32)


def quantized_conv1d_forward(
    x: npt.ArrayLike, spec: Conv1dSpec, weights: QuantizedWeights, cfg: QuantConfig
) -> FloatArray:
    """
    1-D convolution on quantized weights.

    Layer norm runs over channels at each time step, gamma over the whole
    input, and zero padding is applied to the scaled activations.

    Returns:
        ``(c_out, T_out)`` or ``(N, c_out, T_out)`` matching the input rank
    """
    batch, squeeze = _conv_batch(_as_input(x), spec)
    _check_weights(weights.shape, spec.weight_shape)
    act = quantize_activation(_normalize(batch, 1, cfg), cfg)
    w = _integer_weights(weights).reshape(spec.c_out, -1)
    y_tilde = accumulate(im2col(act.values, spec), w).transpose(0, 2, 1)
    y = rescale_output(y_tilde, act.gamma, weights.beta, act.bits).astype(np.float32)
    return y[0] if squeeze else y


def ternary_linear_forward(
    x: npt.ArrayLike, weights: TernaryTensor, cfg: QuantConfig
) -> FloatArray:
    """
    Linear layer on ternary weights.

    Raises:
        TypeError: ``weights`` is not a :class:`TernaryTensor`
    """
    if not isinstance(weights, TernaryTensor):
        raise TypeError("ternary_linear_forward needs a TernaryTensor")
    return quantized_linear_forward(x, weights, cfg)


def ternary_conv1d_forward(
    x: npt.ArrayLike, spec: Conv1dSpec, weights: TernaryTensor, cfg: QuantConfig
) -> FloatArray:
    """Conv1d layer on ternary weights; see :func:`ternary_linear_forward`."""
    if not isinstance(weights, TernaryTensor):
        raise TypeError("ternary_conv1d_forward needs a TernaryTensor")
    return quantized_conv1d_forward(x, spec, weights, cfg)


def packed_forward(
    x: npt.ArrayLike,
    spec: LayerSpec,
    packed: PackedWeights,
    beta: float,
    cfg: QuantConfig,
) -> FloatArray:
    """
    Run a layer straight from its block indices.

    The indices are validated and decoded before any compute, so the result is
    bit-identical to decoding first and calling the dense ternary forward.

    Raises:
        InvalidIndexError: A corrupted index
        ShapeMismatchError: Packed shape differs from ``spec.weight_shape``
    """
    packed.validate()
    _check_weights(packed.shape, spec.weight_shape)
    weights = TernaryTensor(values=decode(packed), beta=beta)
    if isinstance(spec, LinearSpec):
        return ternary_linear_forward(x, weights, cfg)
    return ternary_conv1d_forward(x, spec, weights, cfg)


# --- float layers -------------------------------------------------------------


def float_linear_forward(x: npt.ArrayLike, weights: npt.ArrayLike, cfg: QuantConfig) -> FloatArray:
    """Float passthrough: optional layer norm followed by x @ W.T."""
    xa = _as_input(x)
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or xa.shape[-1] != w.shape[1]:
        raise ShapeMismatchError(f"input {xa.shape} incompatible with linear weights {w.shape}")
    return accumulate(_normalize(xa, -1, cfg), w).astype(np.float32)


def float_conv1d_forward(
    x: npt.ArrayLike, spec: Conv1dSpec, weights: npt.ArrayLike, cfg: QuantConfig
) -> FloatArray:
    """
    Float passthrough convolution: optional layer norm, then cross-correlation.

    Args:
        x: Input ``(N, c_in, T)`` or a single ``(c_in, T)`` sequence
        spec: Channels, kernel size, stride and padding
        weights: Float weights of shape ``spec.weight_shape``
        cfg: Layer-norm settings (no quantization is applied)

    Returns:
        float32 output ``(N, c_out, T_out)``, or ``(c_out, T_out)`` for a single sequence

    Raises:
        ShapeMismatchError: Input or weights do not fit ``spec``
    """
    batch, squeeze = _conv_batch(_as_input(x), spec)
    w = np.asarray(weights, dtype=np.float64)
    _check_weights(w.shape, spec.weight_shape)
    cols = im2col(_normalize(batch, 1, cfg), spec)
    y = accumulate(cols, w.reshape(spec.c_out, -1)).transpose(0, 2, 1).astype(np.float32)
    return y[0] if squeeze else y


def layer_forward(
    x: npt.ArrayLike,
    spec: LayerSpec,
    weights: QuantizedWeights | npt.NDArray[np.floating],
    cfg: QuantConfig,
) -> FloatArray:
    """Dispatch on the layer type and on quantized versus float weights."""
    if isinstance(weights, (TernaryTensor, IntQuantTensor)):
        if isinstance(spec, LinearSpec):
            return quantized_linear_forward(x, weights, cfg)
        return quantized_conv1d_forward(x, spec, weights, cfg)
    if isinstance(spec, LinearSpec):
        return float_linear_forward(x, weights, cfg)
    return float_conv1d_forward(x, spec, weights, cfg)


# --- naive oracles ------------------------------------------------------------


def _naive_normalize(vectors: list[list[float]], cfg: QuantConfig) -> list[list[float]]:
    if not cfg.layer_norm:
        return [list(v) for v in vectors]
    out: list[list[float]] = []
    for v in vectors:
        mean = sum(v) / len(v)
        var = sum((a - mean) ** 2 for a in v) / len(v)
        denom = (var + cfg.layer_norm_eps) ** 0.5
        out.append([(a - mean) / denom for a in v])
    return out


def _naive_scale(vectors: list[list[float]], cfg: QuantConfig) -> tuple[list[list[float]], float]:
    q_p = float(2 ** (cfg.activation_bits - 1))
    gamma = max(abs(a) for v in vectors for a in v)
    scale = q_p / max(gamma, cfg.epsilon)
    lo, hi = -q_p + cfg.epsilon, q_p - cfg.epsilon
    return [[min(max(a * scale, lo), hi) for a in v] for v in vectors], gamma


def reference_linear(
    x: npt.ArrayLike, values: npt.ArrayLike, beta: float, cfg: QuantConfig
) -> Float64Array:
    """
    Triple-loop oracle for the linear pipeline on 2-D input ``(rows, in)``.

    Uses dequantized weights (W~ * beta) and de-scaled activations
    (x~ * gamma / Q_p) in plain Python floats.
    """
    xs = np.asarray(x, dtype=np.float64).tolist()
    w = np.asarray(values, dtype=np.float64).tolist()
    q_p = float(2 ** (cfg.activation_bits - 1))
    rows, gamma = _naive_scale(_naive_normalize(xs, cfg), cfg)
    out = np.zeros((len(rows), len(w)), dtype=np.float64)
    for i, row in enumerate(rows):
        for o, w_row in enumerate(w):
            acc = 0.0
            for j, a in enumerate(row):
                acc += (w_row[j] * beta) * (a * gamma / q_p)
            out[i, o] = acc
    return out


def reference_conv1d(
    x: npt.ArrayLike, spec: Conv1dSpec, values: npt.ArrayLike, beta: float, cfg: QuantConfig
) -> Float64Array:
    """Direct-sum oracle for the conv1d pipeline on a single ``(c_in, T)`` input."""
    xs = np.asarray(x, dtype=np.float64)
    c_in, length = xs.shape
    # Normalize per time step over channels.
    columns = _naive_normalize(xs.T.tolist(), cfg)
    scaled, gamma = _naive_scale(columns, cfg)
    q_p = float(2 ** (cfg.activation_bits - 1))
    w = np.asarray(values, dtype=np.float64)
    t_out = spec.output_length(length)
    out = np.zeros((spec.c_out, t_out), dtype=np.float64)
    for o in range(spec.c_out):
        for t in range(t_out):
            acc = 0.0
            for c in range(c_in):
                for k in range(spec.kernel_size):
                    pos = t * spec.stride + k - spec.padding
                    if 0 <= pos < length:
                        acc += (w[o, c, k] * beta) * (scaled[pos][c] * gamma / q_p)
            out[o, t] = acc
    return out
