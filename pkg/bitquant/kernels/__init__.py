"""
Quantized inference kernels for bitquant.

Linear and 1-D convolution forwards on ternary, b-bit, packed or float
weights, plus naive-loop reference implementations for testing.
"""

from bitquant.kernels.ternary_ops import (
    Conv1dSpec,
    LayerSpec,
    LinearSpec,
    accumulate,
    col2im,
    float_conv1d_forward,
    float_linear_forward,
    im2col,
    layer_forward,
    packed_forward,
    quantized_conv1d_forward,
    quantized_linear_forward,
    reference_conv1d,
    reference_linear,
    ternary_conv1d_forward,
    ternary_linear_forward,
)

__all__ = [
    "Conv1dSpec",
    "LayerSpec",
    "LinearSpec",
    "accumulate",
    "col2im",
    "float_conv1d_forward",
    "float_linear_forward",
    "im2col",
    "layer_forward",
    "packed_forward",
    "quantized_conv1d_forward",
    "quantized_linear_forward",
    "reference_conv1d",
    "reference_linear",
    "ternary_conv1d_forward",
    "ternary_linear_forward",
]
