"""
Weight-indexing codec for bitquant.

Ternary tensors are stored as one 8-bit pattern index per block of five
weights, with an optional canonical Huffman stage on top.
"""

from bitquant.codec.huffman import (
    HuffmanCodedPayload,
    empirical_entropy,
    huffman_decode,
    huffman_encode,
)
from bitquant.codec.index_codec import (
    DEFAULT_BLOCK_SIZE,
    IndexHistogram,
    PackedWeights,
    PatternTable,
    SizeMode,
    decode,
    decode_rows,
    decode_ternary,
    encode,
    encode_rows,
    histogram,
    packed_size_bytes,
    pattern_table,
)

__all__ = [
    "DEFAULT_BLOCK_SIZE",
    "HuffmanCodedPayload",
    "IndexHistogram",
    "PackedWeights",
    "PatternTable",
    "SizeMode",
    "decode",
    "decode_rows",
    "decode_ternary",
    "empirical_entropy",
    "encode",
    "encode_rows",
    "histogram",
    "huffman_decode",
    "huffman_encode",
    "packed_size_bytes",
    "pattern_table",
]
