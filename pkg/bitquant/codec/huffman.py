"""
Canonical Huffman coding of 8-bit index streams.

The code is fully described by 256 code-length bytes (0 = symbol absent).
Codes are assigned canonically in (length, symbol) order and the bitstream is
written MSB-first, so encoder and decoder only share the length table.

Serialized payload layout (little-endian):

    [256 B]  code length of every symbol
    [8 B]    symbol_count (u64)
    [N B]    bitstream, zero-padded to a whole byte
"""

import heapq
import itertools
import logging
import math
import struct
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from bitquant.errors import HuffmanError

logger = logging.getLogger(__name__)

ALPHABET_SIZE = 256
TABLE_BYTES = ALPHABET_SIZE
HEADER_BYTES = TABLE_BYTES + 8


@dataclass(frozen=True)
class HuffmanCodedPayload:
    """
    Entropy-coded symbol stream.

    Attributes:
        code_lengths: 256 code lengths in bits, 0 for absent symbols
        bitstream: Packed code bits, MSB-first, zero padded
        symbol_count: Number of encoded symbols
    """

    code_lengths: tuple[int, ...]
    bitstream: bytes
    symbol_count: int

    @property
    def bit_length(self) -> int:
        """Exact number of code bits (excluding padding)."""
        return _bit_length(self.code_lengths, self.bitstream, self.symbol_count)

    def kraft_sum(self) -> float:
        """Sum of 2^-l over used code lengths; 1.0 for a complete prefix code."""
        return sum(2.0**-n for n in self.code_lengths if n)

    @property
    def stored_size(self) -> int:
        """Bytes taken by the serialized payload (table + count + bitstream)."""
        return HEADER_BYTES + len(self.bitstream)

    def to_bytes(self) -> bytes:
        """Serialize as 256 length bytes, the u64 symbol count, then the bitstream."""
        return bytes(self.code_lengths) + struct.pack("<Q", self.symbol_count) + self.bitstream

    @classmethod
    def from_bytes(cls, data: bytes) -> "HuffmanCodedPayload":
        """
        Parse a serialized payload.

        Raises:
            HuffmanError: If the buffer is shorter than the fixed header
        """
        if len(data) < HEADER_BYTES:
            raise HuffmanError(f"Huffman payload of {len(data)} bytes is shorter than its header")
        lengths = tuple(data[:TABLE_BYTES])
        (count,) = struct.unpack_from("<Q", data, TABLE_BYTES)
        return cls(code_lengths=lengths, bitstream=bytes(data[HEADER_BYTES:]), symbol_count=count)


def _bit_length(lengths: Sequence[int], bitstream: bytes, count: int) -> int:
    # Only the decoder knows the exact bit count; recover it by walking.
    if count == 0:
        return 0
    total = 0
    for sym in _decode_symbols(lengths, bitstream, count):
        total += lengths[sym]
    return total


def code_lengths(symbols: Sequence[int]) -> list[int]:
    """
    Build Huffman code lengths from symbol frequencies.

    Ties in frequency are broken by the smallest symbol contained in a
    subtree, so the result is deterministic. A single distinct symbol gets a
    1-bit code.
    """
    freq = Counter(int(s) for s in symbols)
    lengths = [0] * ALPHABET_SIZE
    if not freq:
        return lengths
    if len(freq) == 1:
        lengths[next(iter(freq))] = 1
        return lengths

    # (weight, smallest symbol, tiebreak, members)
    counter = itertools.count()
    heap: list[tuple[int, int, int, list[int]]] = [
        (f, s, next(counter), [s]) for s, f in sorted(freq.items())
    ]
    heapq.heapify(heap)
    while len(heap) > 1:
        fa, sa, _, a = heapq.heappop(heap)
        fb, sb, _, b = heapq.heappop(heap)
        for s in a:
            lengths[s] += 1
        for s in b:
            lengths[s] += 1
        heapq.heappush(heap, (fa + fb, min(sa, sb), next(counter), a + b))
    return lengths


def canonical_codes(lengths: Sequence[int]) -> dict[int, tuple[int, int]]:
    """
    Assign canonical codes from a code-length table.

    Returns:
        {symbol: (code, length)} in (length, symbol) order
    """
    codes: dict[int, tuple[int, int]] = {}
    code = 0
    prev_len = 0
    for sym, length in sorted(
        ((s, n) for s, n in enumerate(lengths) if n), key=lambda item: (item[1], item[0])
    ):
        code <<= length - prev_len
        prev_len = length
        codes[sym] = (code, length)
        code += 1
    return codes


def _check_table(lengths: Sequence[int]) -> None:
    if len(lengths) != ALPHABET_SIZE:
        raise HuffmanError(f"code table must have {ALPHABET_SIZE} entries, got {len(lengths)}")
    present = [n for n in lengths if n]
    if not present:
        raise HuffmanError("code table has no symbols")
    if sum(2.0**-n for n in present) > 1.0 + 1e-12:
        raise HuffmanError("code lengths violate the Kraft inequality")


def huffman_encode(symbols: Sequence[int] | npt.NDArray[np.uint8]) -> HuffmanCodedPayload:
    """
    Entropy-code a sequence of 8-bit symbols.

    Raises:
        HuffmanError: On empty input or symbols outside [0, 255]
    """
    data = [int(s) for s in symbols]
    if not data:
        raise HuffmanError("cannot Huffman-code an empty symbol sequence")
    if min(data) < 0 or max(data) >= ALPHABET_SIZE:
        raise HuffmanError("Huffman symbols must be in [0, 255]")

    lengths = code_lengths(data)
    codes = canonical_codes(lengths)

    out = bytearray()
    acc = 0
    nbits = 0
    for s in data:
        code, length = codes[s]
        acc = (acc << length) | code
        nbits += length
        while nbits >= 8:
            nbits -= 8
            out.append((acc >> nbits) & 0xFF)
        acc &= (1 << nbits) - 1
    if nbits:
        out.append((acc << (8 - nbits)) & 0xFF)

    payload = HuffmanCodedPayload(
        code_lengths=tuple(lengths), bitstream=bytes(out), symbol_count=len(data)
    )
    logger.debug(
        "huffman: %d symbols -> %d bytes (+%d table)", len(data), len(out), HEADER_BYTES
    )
    return payload


def _decode_symbols(lengths: Sequence[int], bitstream: bytes, count: int) -> list[int]:
    _check_table(lengths)
    max_len = max(lengths)
    # Per-length canonical decoding: first code and symbol offset of each length.
    bl_count = [0] * (max_len + 1)
    for n in lengths:
        if n:
            bl_count[n] += 1
    ordered = [s for s, n in sorted(enumerate(lengths), key=lambda it: (it[1], it[0])) if n]
    first_code = [0] * (max_len + 2)
    first_index = [0] * (max_len + 2)
    code = 0
    index = 0
    for n in range(1, max_len + 1):
        code = (code + bl_count[n - 1]) << 1 if n > 1 else 0
        first_code[n] = code
        first_index[n] = index
        index += bl_count[n]

    result: list[int] = []
    total_bits = len(bitstream) * 8
    pos = 0
    while len(result) < count:
        acc = 0
        for n in range(1, max_len + 1):
            if pos >= total_bits:
                raise HuffmanError("bitstream ended in the middle of a code")
            acc = (acc << 1) | ((bitstream[pos >> 3] >> (7 - (pos & 7))) & 1)
            pos += 1
            offset = acc - first_code[n]
            if 0 <= offset < bl_count[n]:
                result.append(ordered[first_index[n] + offset])
                break
        else:
            raise HuffmanError(f"invalid code at bit {pos} (prefix matches no symbol)")

    if len(bitstream) != (pos + 7) // 8:
        raise HuffmanError(
            f"bitstream has {len(bitstream)} bytes, {(pos + 7) // 8} expected for {count} symbols"
        )
    return result


def huffman_decode(payload: HuffmanCodedPayload) -> list[int]:
    """
    Decode a payload back to its exact symbol sequence.

    Raises:
        HuffmanError: Malformed table or bitstream
    """
    if payload.symbol_count == 0:
        raise HuffmanError("Huffman payload declares zero symbols")
    return _decode_symbols(payload.code_lengths, payload.bitstream, payload.symbol_count)


def empirical_entropy(symbols: Sequence[int] | npt.NDArray[np.uint8]) -> float:
    """Shannon entropy of the symbol histogram, in bits per symbol."""
    counts = np.bincount(np.asarray(symbols, dtype=np.int64), minlength=ALPHABET_SIZE)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts[counts > 0] / n
    return float(-(p * np.log2(p)).sum())


def mean_code_length(lengths: Sequence[int], symbols: Sequence[int]) -> float:
    """
    Average code length in bits per symbol of ``symbols`` under ``lengths``.

    Returns:
        NaN for an empty stream
    """
    freq = Counter(int(s) for s in symbols)
    n = sum(freq.values())
    return sum(lengths[s] * f for s, f in freq.items()) / n if n else math.nan
