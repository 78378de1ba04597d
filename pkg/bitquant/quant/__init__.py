"""
Quantization math for bitquant.

This module provides ternary and b-bit weight quantization, activation
scaling with layer normalization, and output rescaling.
"""

from bitquant.quant.quantizers import (
    BBitQuantizer,
    FloatPassthrough,
    TernaryQuantizer,
    WeightQuantizer,
    compute_beta,
    get_quantizer,
    layer_norm,
    quantize_activation,
    quantize_b_bit,
    quantize_ternary,
    quantize_weights,
    rescale_output,
    round_half_away,
    round_half_even,
)
from bitquant.quant.tensors import (
    IntQuantTensor,
    QuantActivation,
    QuantizedWeights,
    TernaryTensor,
    as_float_tensor,
)

__all__ = [
    "BBitQuantizer",
    "FloatPassthrough",
    "IntQuantTensor",
    "QuantActivation",
    "QuantizedWeights",
    "TernaryQuantizer",
    "TernaryTensor",
    "WeightQuantizer",
    "as_float_tensor",
    "compute_beta",
    "get_quantizer",
    "layer_norm",
    "quantize_activation",
    "quantize_b_bit",
    "quantize_ternary",
    "quantize_weights",
    "rescale_output",
    "round_half_away",
    "round_half_even",
]
