"""
Weight and activation quantization math.

Weights are scaled by their mean absolute value and rounded onto a ternary or
b-bit integer grid; activations are layer-normalized, scaled by their
infinity norm into (-Q_p, Q_p) and clipped. Layer outputs computed on the
quantized operands are mapped back with ``rescale_output``.

The module exposes plain functions for each step plus a small strategy
interface (:class:`WeightQuantizer`) so training code can switch between
ternary, b-bit and float weights without branching.

Example:
    >>> import numpy as np
    >>> from bitquant.config import QuantConfig
    >>> w = np.array([0.5, -0.2, 0.1, -0.9], dtype=np.float32)
    >>> t = quantize_ternary(w, QuantConfig())
    >>> t.values.tolist(), round(t.beta, 3)
    ([1, 0, 0, -1], 0.425)
"""

import logging
from abc import ABC, abstractmethod

import numpy as np
import numpy.typing as npt

from bitquant.config import QuantConfig
from bitquant.errors import QuantizationError
from bitquant.quant.tensors import (
    Float64Array,
    FloatArray,
    IntQuantTensor,
    QuantActivation,
    QuantizedWeights,
    TernaryTensor,
    as_float_tensor,
)

logger = logging.getLogger(__name__)


def round_half_away(x: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Round to nearest integer, ties away from zero (symmetric about 0)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def round_half_even(x: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Round to nearest integer, ties to the even neighbor (numpy's default)."""
    return np.rint(x)


def _round(x: npt.NDArray[np.float64], rule: str) -> npt.NDArray[np.float64]:
    if rule == "half_even":
        return round_half_even(x)
    return round_half_away(x)


def compute_beta(weights: npt.ArrayLike) -> float:
    """
    Compute the per-tensor weight scale: the mean absolute value.

    The dense form (1/N) sum |w| and the convolutional form averaged over
    c_out * c_in * K are the same reduction over all elements.

    Raises:
        QuantizationError: If the tensor is empty ("empty weight tensor")
    """
    w = as_float_tensor(weights)
    return float(np.mean(np.abs(w.astype(np.float64))))


def _scaled(weights: FloatArray, beta: float, eps: float) -> npt.NDArray[np.float64]:
    return weights.astype(np.float64) / (beta + eps)


def quantize_ternary(weights: npt.ArrayLike, cfg: QuantConfig | None = None) -> TernaryTensor:
    """
    Quantize weights to {-1, 0, 1}: Round(Clip(W / (beta + eps), -1, 1)).

    Args:
        weights: Float weights of any shape
        cfg: Quantization settings (epsilon, rounding rule)

    Returns:
        TernaryTensor with the input's shape

    Raises:
        QuantizationError: On empty or non-finite input
    """
    cfg = cfg or QuantConfig()
    w = as_float_tensor(weights)
    beta = compute_beta(w)
    clipped = np.clip(_scaled(w, beta, cfg.epsilon), -1.0, 1.0)
    values = _round(clipped, cfg.rounding).astype(np.int8)
    return TernaryTensor(values=values, beta=beta)


def quantize_b_bit(weights: npt.ArrayLike, cfg: QuantConfig) -> IntQuantTensor:
    """
    Quantize weights to b-bit integers: Round(Clip(W / (beta + eps), -q, q - 1)).

    q = 2^(b-1), so 4-bit values land in [-8, 7].

    Raises:
        QuantizationError: If cfg selects the ternary mode or bits < 2
    """
    if cfg.is_ternary:
        raise QuantizationError("ternary mode must use quantize_ternary")
    bits = int(cfg.bits)
    if bits < 2:
        raise QuantizationError(f"b-bit quantization needs bits >= 2, got {bits}")
    w = as_float_tensor(weights)
    beta = compute_beta(w)
    q = 2 ** (bits - 1)
    clipped = np.clip(_scaled(w, beta, cfg.epsilon), -q, q - 1)
    values = _round(clipped, cfg.rounding).astype(np.int8)
    return IntQuantTensor(values=values, bits=bits, beta=beta)


def quantize_weights(weights: npt.ArrayLike, cfg: QuantConfig) -> QuantizedWeights:
    """Dispatch to ternary or b-bit quantization according to ``cfg.bits``."""
    result: QuantizedWeights
    if cfg.is_ternary:
        result = quantize_ternary(weights, cfg)
    else:
        result = quantize_b_bit(weights, cfg)
    logger.debug("quantized %s weights to %s bits, beta=%.6g", result.shape, cfg.bits, result.beta)
    return result


def layer_norm(x: npt.ArrayLike, axis: int = -1, eps: float = 1e-5) -> FloatArray:
    """
    Parameter-free layer normalization along ``axis``.

    Each slice along ``axis`` is shifted to mean 0 and scaled to unit
    variance (biased estimator, variance guarded by ``eps``). A constant
    slice normalizes to zeros.
    """
    return layer_norm64(np.asarray(x, dtype=np.float64), axis, eps).astype(np.float32)


def layer_norm64(x: Float64Array, axis: int, eps: float) -> Float64Array:
    """float64 core of :func:`layer_norm`, shared with the kernels."""
    if x.shape[axis] < 1:
        raise QuantizationError("layer_norm needs a non-empty normalization axis")
    mean = x.mean(axis=axis, keepdims=True)
    var = x.var(axis=axis, keepdims=True)
    return (x - mean) / np.sqrt(var + eps)


def quantize_activation(x: npt.ArrayLike, cfg: QuantConfig | None = None) -> QuantActivation:
    """
    Scale activations by their infinity norm: Clip(x Q_p / gamma, -Q_p + eps, Q_p - eps).

    gamma = max |x|. The division is guarded as max(gamma, eps) so an all-zero
    input yields zeros. Values are clipped, not rounded, and stay strictly
    inside (-Q_p, Q_p) even when eps is below the float64 spacing at Q_p.
    """
    cfg = cfg or QuantConfig()
    xa = np.asarray(x, dtype=np.float64)
    if xa.size == 0:
        raise QuantizationError("empty activation tensor")
    q_p = float(2 ** (cfg.activation_bits - 1))
    gamma = float(np.max(np.abs(xa)))
    scaled = xa * q_p / max(gamma, cfg.epsilon)
    upper = min(q_p - cfg.epsilon, float(np.nextafter(q_p, 0.0)))
    values = np.clip(scaled, -upper, upper)
    return QuantActivation(values=values, gamma=gamma, bits=cfg.activation_bits)


def rescale_output(
    y_tilde: npt.ArrayLike, gamma: float, beta: float, p: int
) -> npt.NDArray[np.float64]:
    """
    Restore the output scale: y = y~ * gamma * beta / Q_p.

    Args:
        y_tilde: Output computed on quantized weights and activations
        gamma: Activation scale of the layer input
        beta: Weight scale of the layer
        p: Activation precision (Q_p = 2^(p-1))
    """
    if p < 2:
        raise QuantizationError(f"activation precision must be >= 2, got {p}")
    q_p = float(2 ** (p - 1))
    return np.asarray(y_tilde, dtype=np.float64) * (gamma * beta / q_p)


class WeightQuantizer(ABC):
    """
    Abstract interface for weight quantization strategies.

    Training code holds float master weights and asks its quantizer for the
    integer grid values and scale used in the forward pass:
    - TernaryQuantizer: 1.58-bit {-1, 0, 1}
    - BBitQuantizer: signed b-bit integers
    - FloatPassthrough: no quantization (float baseline)
    """

    @abstractmethod
    def quantize(self, weights: npt.ArrayLike) -> QuantizedWeights | None:
        """
        Quantize float weights.

        Returns:
            Quantized weights, or None when weights stay in float
        """

    @property
    @abstractmethod
    def label(self) -> str:
        """Short name used in logs and reports."""


class TernaryQuantizer(WeightQuantizer):
    """
    1.58-bit strategy: absmean scale and weights in {-1, 0, 1}.
    """

    def __init__(self, cfg: QuantConfig) -> None:
        """
        Initialize strategy.

        Args:
            cfg: Quantization settings (epsilon and rounding rule are used)
        """
        self.cfg = cfg

    def quantize(self, weights: npt.ArrayLike) -> TernaryTensor:
        """
        Quantize float weights to ternary values.

        Args:
            weights: Float master weights

        Returns:
            Ternary values and their scale beta
        """
        return quantize_ternary(weights, self.cfg)

    @property
    def label(self) -> str:
        """Always ``"ternary"``."""
        return "ternary"


class BBitQuantizer(WeightQuantizer):
    """
    Signed b-bit strategy for integer widths 2..8.
    """

    def __init__(self, cfg: QuantConfig) -> None:
        """
        Initialize strategy.

        Args:
            cfg: Quantization settings with an integer ``bits``

        Raises:
            QuantizationError: ``cfg`` selects the ternary mode
        """
        if cfg.is_ternary:
            raise QuantizationError("BBitQuantizer needs an integer bit width")
        self.cfg = cfg

    def quantize(self, weights: npt.ArrayLike) -> IntQuantTensor:
        """
        Quantize float weights to signed b-bit integers.

        Args:
            weights: Float master weights

        Returns:
            Integers in [-2^(b-1), 2^(b-1) - 1] and their scale beta
        """
        return quantize_b_bit(weights, self.cfg)

    @property
    def label(self) -> str:
        """Bit width as ``"<b>-bit"``, e.g. ``"4-bit"``."""
        return f"{int(self.cfg.bits)}-bit"


class FloatPassthrough(WeightQuantizer):
    """Float baseline: weights are used as they are."""

    def quantize(self, weights: npt.ArrayLike) -> None:
        """Return None; float layers have no quantized form."""
        return None

    @property
    def label(self) -> str:
        """Always ``"float32"``."""
        return "float32"


def get_quantizer(cfg: QuantConfig, *, float_weights: bool = False) -> WeightQuantizer:
    """
    Select a weight quantization strategy for ``cfg``.

    Args:
        cfg: Quantization settings
        float_weights: Return the float passthrough regardless of ``cfg.bits``
    """
    if float_weights:
        return FloatPassthrough()
    if cfg.is_ternary:
        return TernaryQuantizer(cfg)
    return BBitQuantizer(cfg)
