"""
bitquant: 1.58-bit weight quantization, weight indexing and QAT toolkit.

This package quantizes float weights to ternary {-1, 0, 1} or b-bit integers,
stores ternary tensors compactly as 8-bit pattern indices, runs inference
directly on quantized or packed weights, and trains small conv1d networks
with fake quantization.

The package is organized into the following modules:
- quant: Weight and activation quantization
- codec: Weight-indexing codec and canonical Huffman coding
- format: .btw / .btq archives and size reports
- kernels: Linear and conv1d inference on quantized weights
- qat: Gradient engine, fake-quantized layers and the QAT experiment
- graphics: Index-frequency chart rendering
- config: Configuration management

Example:
    Basic usage from Python code:

    >>> from bitquant import quantize_ternary
    >>> quantize_ternary([0.5, -0.2, 0.1, -0.9]).values.tolist()
    [1, 0, 0, -1]

    Or from command line:
    $ poetry run bitquant sizes --weights 327680
"""

__version__ = "0.1.0"
__author__ = "bitquant Contributors"
__license__ = "MIT"

from bitquant.codec.index_codec import decode, encode, histogram, packed_size_bytes
from bitquant.config import BitQuantConfig, CodecConfig, QuantConfig, get_default_config
from bitquant.format.archive import load_quant_archive, save_quant_archive
from bitquant.format.sizes import size_report
from bitquant.kernels.ternary_ops import packed_forward, ternary_conv1d_forward
from bitquant.quant.quantizers import quantize_b_bit, quantize_ternary

__all__ = [
    "__version__",
    "__author__",
    "__license__",
    "BitQuantConfig",
    "CodecConfig",
    "QuantConfig",
    "decode",
    "encode",
    "get_default_config",
    "histogram",
    "load_quant_archive",
    "packed_forward",
    "packed_size_bytes",
    "quantize_b_bit",
    "quantize_ternary",
    "save_quant_archive",
    "size_report",
    "ternary_conv1d_forward",
]
