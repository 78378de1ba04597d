"""
Quantized tensor containers.

Float tensors are plain ``numpy`` arrays (float32 at the API boundary). The
results of quantization are small immutable dataclasses that bundle the
integer values with their scale.
"""

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from bitquant.errors import QuantizationError

FloatArray = npt.NDArray[np.float32]
Float64Array = npt.NDArray[np.float64]
Int8Array = npt.NDArray[np.int8]


def as_float_tensor(x: npt.ArrayLike, *, allow_empty: bool = False) -> FloatArray:
    """
    Validate and convert an array-like into a float32 tensor.

    Args:
        x: Input values
        allow_empty: Accept tensors with zero elements

    Returns:
        float32 ndarray (a new array if a conversion was needed)

    Raises:
        QuantizationError: If the tensor is empty or holds NaN/Inf
    """
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.size == 0 and not allow_empty:
        raise QuantizationError("empty weight tensor")
    if not np.all(np.isfinite(arr)):
        raise QuantizationError("tensor contains non-finite values")
    return arr


@dataclass(frozen=True)
class TernaryTensor:
    """
    Ternary weights with their per-tensor scale.

    Attributes:
        values: int8 array with every entry in {-1, 0, 1}
        beta: Mean absolute value of the source weights (0 for all-zero weights)
    """

    values: Int8Array
    beta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.array(self.values, dtype=np.int8))
        if np.any(np.abs(self.values) > 1):
            raise QuantizationError("ternary tensor holds values outside {-1, 0, 1}")
        if not np.isfinite(self.beta) or self.beta < 0:
            raise QuantizationError(f"invalid ternary scale {self.beta}")
        self.values.setflags(write=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    def dequantize(self) -> FloatArray:
        """Return W~ * beta, with every value in {-beta, 0, beta}."""
        return (self.values.astype(np.float64) * self.beta).astype(np.float32)


@dataclass(frozen=True)
class IntQuantTensor:
    """
    b-bit integer weights with their per-tensor scale.

    Attributes:
        values: int8 array within [-2^(b-1), 2^(b-1) - 1]
        bits: Precision b
        beta: Mean absolute value of the source weights
    """

    values: Int8Array
    bits: int
    beta: float

    def __post_init__(self) -> None:
        if not 2 <= self.bits <= 8:
            raise QuantizationError(f"b-bit tensors need 2 <= bits <= 8, got {self.bits}")
        object.__setattr__(self, "values", np.array(self.values, dtype=np.int8))
        q = 2 ** (self.bits - 1)
        if self.values.size and (self.values.min() < -q or self.values.max() > q - 1):
            raise QuantizationError(f"values leave the {self.bits}-bit range [{-q}, {q - 1}]")
        if not np.isfinite(self.beta) or self.beta < 0:
            raise QuantizationError(f"invalid scale {self.beta}")
        self.values.setflags(write=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    def dequantize(self) -> FloatArray:
        """Return values * beta as float32."""
        return (self.values.astype(np.float64) * self.beta).astype(np.float32)


QuantizedWeights = TernaryTensor | IntQuantTensor


@dataclass(frozen=True)
class QuantActivation:
    """
    Scaled and clipped activations.

    Values are clipped to [-Q_p + eps, Q_p - eps] but not rounded.

    Attributes:
        values: float64 array, strictly inside (-Q_p, Q_p)
        gamma: Infinity norm of the tensor before scaling
        bits: Activation precision p
    """

    values: Float64Array
    gamma: float
    bits: int

    @property
    def q_p(self) -> float:
        """Activation range bound 2^(p-1)."""
        return float(2 ** (self.bits - 1))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.values.shape)
