"""
Tests for canonical Huffman coding of index streams.
"""

import math

import numpy as np
import pytest

from bitquant.codec.huffman import (
    HEADER_BYTES,
    HuffmanCodedPayload,
    canonical_codes,
    code_lengths,
    empirical_entropy,
    huffman_decode,
    huffman_encode,
    mean_code_length,
)
from bitquant.errors import HuffmanError


def biased_stream(rng: np.random.Generator, n: int = 10_000) -> list[int]:
    """Index stream dominated by the all-zero block, like a sparse ternary layer."""
    probs = np.full(243, 0.2 / 242)
    probs[0] = 0.8
    return rng.choice(243, size=n, p=probs).tolist()


class TestRoundTrip:
    """Test that decoding restores the exact symbol sequence."""

    def test_small_sequence(self) -> None:
        """Test a short hand-written stream."""
        data = [0, 0, 0, 121, 242, 0, 7, 121]
        assert huffman_decode(huffman_encode(data)) == data

    def test_random_streams(self, rng: np.random.Generator) -> None:
        """Test random streams of varying length and alphabet."""
        for _ in range(50):
            n = int(rng.integers(1, 500))
            alphabet = int(rng.integers(1, 256))
            data = rng.integers(0, alphabet, size=n).tolist()
            assert huffman_decode(huffman_encode(data)) == data

    def test_serialized_round_trip(self, rng: np.random.Generator) -> None:
        """Test decoding after a trip through the byte layout."""
        data = biased_stream(rng, 2_000)
        payload = huffman_encode(data)
        raw = payload.to_bytes()
        assert len(raw) == payload.stored_size
        restored = HuffmanCodedPayload.from_bytes(raw)
        assert restored == payload
        assert huffman_decode(restored) == data

    def test_uint8_array_input(self) -> None:
        """Test that numpy index arrays are accepted."""
        data = np.array([1, 2, 2, 3], dtype=np.uint8)
        assert huffman_decode(huffman_encode(data)) == [1, 2, 2, 3]


class TestCodeProperties:
    """Test code-length and bitstream bounds."""

    def test_single_symbol(self) -> None:
        """Test that one repeated symbol gets a 1-bit code."""
        payload = huffman_encode([5] * 1_000)
        assert payload.code_lengths[5] == 1
        assert sum(1 for n in payload.code_lengths if n) == 1
        assert len(payload.bitstream) <= 126
        assert payload.bit_length == 1_000
        assert huffman_decode(payload) == [5] * 1_000

    def test_entropy_bounds(self, rng: np.random.Generator) -> None:
        """Test H * n <= coded bits <= (H + 1) * n on a biased stream."""
        data = biased_stream(rng)
        payload = huffman_encode(data)
        h = empirical_entropy(data)
        n = len(data)
        assert h * n <= payload.bit_length <= (h + 1) * n
        assert len(payload.bitstream) == math.ceil(payload.bit_length / 8)

    def test_biased_stream_shrinks(self, rng: np.random.Generator) -> None:
        """Test that a skewed stream codes smaller than one byte per index."""
        data = biased_stream(rng)
        assert huffman_encode(data).stored_size < len(data)

    def test_kraft_sum(self, rng: np.random.Generator) -> None:
        """Test that the lengths of a multi-symbol code satisfy Kraft with equality."""
        payload = huffman_encode(biased_stream(rng, 3_000))
        assert payload.kraft_sum() == pytest.approx(1.0)

    def test_uniform_stream(self) -> None:
        """Test that 256 equally likely symbols get 8-bit codes."""
        data = list(range(256)) * 4
        payload = huffman_encode(data)
        assert set(payload.code_lengths) == {8}
        assert len(payload.bitstream) == len(data)
        assert empirical_entropy(data) == pytest.approx(8.0)

    def test_mean_code_length(self) -> None:
        """Test the average code length on a dyadic distribution."""
        data = [0, 0, 1, 2]
        lengths = code_lengths(data)
        assert lengths[0] == 1 and lengths[1] == 2 and lengths[2] == 2
        assert mean_code_length(lengths, data) == pytest.approx(1.5)
        assert empirical_entropy(data) == pytest.approx(1.5)

    def test_canonical_assignment(self) -> None:
        """Test that codes are assigned in (length, symbol) order."""
        lengths = [0] * 256
        lengths[3], lengths[1], lengths[2] = 1, 2, 2
        codes = canonical_codes(lengths)
        assert codes[3] == (0b0, 1)
        assert codes[1] == (0b10, 2)
        assert codes[2] == (0b11, 2)

    def test_deterministic(self, rng: np.random.Generator) -> None:
        """Test that equal input yields byte-identical output."""
        data = biased_stream(rng, 1_000)
        assert huffman_encode(data).to_bytes() == huffman_encode(list(data)).to_bytes()


class TestErrors:
    """Test malformed input handling."""

    def test_empty_input(self) -> None:
        """Test that an empty stream cannot be coded."""
        with pytest.raises(HuffmanError):
            huffman_encode([])

    def test_symbol_out_of_range(self) -> None:
        """Test that symbols must fit a byte."""
        with pytest.raises(HuffmanError):
            huffman_encode([0, 256])

    def test_truncated_header(self) -> None:
        """Test that a payload shorter than its table is rejected."""
        with pytest.raises(HuffmanError):
            HuffmanCodedPayload.from_bytes(b"\x00" * (HEADER_BYTES - 1))

    def test_truncated_bitstream(self) -> None:
        """Test that a missing byte of the bitstream is detected."""
        payload = huffman_encode(list(range(20)) * 3)
        cut = HuffmanCodedPayload(
            code_lengths=payload.code_lengths,
            bitstream=payload.bitstream[:-1],
            symbol_count=payload.symbol_count,
        )
        with pytest.raises(HuffmanError):
            huffman_decode(cut)

    def test_trailing_bitstream_bytes(self) -> None:
        """Test that extra bytes after the last code are rejected."""
        payload = huffman_encode([1, 2, 3, 3])
        padded = HuffmanCodedPayload(
            code_lengths=payload.code_lengths,
            bitstream=payload.bitstream + b"\x00",
            symbol_count=payload.symbol_count,
        )
        with pytest.raises(HuffmanError):
            huffman_decode(padded)

    def test_kraft_violation(self) -> None:
        """Test that an over-full code table is rejected."""
        lengths = [1, 1, 1] + [0] * 253
        bad = HuffmanCodedPayload(code_lengths=tuple(lengths), bitstream=b"\x00", symbol_count=1)
        with pytest.raises(HuffmanError, match="Kraft"):
            huffman_decode(bad)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
