"""
Weight indexing: ternary weights stored as base-3 block indices.

A flattened ternary vector is cut into blocks of ``block_size`` (L*) values.
Each block maps to one index into the virtual table of all 3^L* ternary
patterns, using the digits 0 -> 0, 1 -> 1, -1 -> 2 with the first element of
the block as the least-significant base-3 digit. With L* = 5 there are 243
patterns, so every index fits in one unsigned byte; the all-zero, all-one and
all-minus-one blocks map to 0, 121 and 242.

The final block may be shorter than L*; its missing high digits are zero and
the decoder relies on the stored total length to drop them.
"""

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np
import numpy.typing as npt

from bitquant.errors import (
    BlockSizeError,
    CodecError,
    InvalidIndexError,
    LengthMismatchError,
)
from bitquant.quant.tensors import Int8Array, TernaryTensor

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_SIZE = 5
MAX_INDEX_SYMBOLS = 256

UInt8Array = npt.NDArray[np.uint8]


def check_block_size(block_size: int) -> None:
    """
    Raises:
        BlockSizeError: If 3^block_size patterns do not fit an 8-bit index
    """
    if block_size < 1:
        raise BlockSizeError(f"block size must be >= 1, got {block_size}")
    if 3**block_size > MAX_INDEX_SYMBOLS:
        raise BlockSizeError(
            f"block size {block_size} needs {3 ** block_size} patterns; "
            f"8-bit indices hold at most {MAX_INDEX_SYMBOLS}"
        )


def num_blocks(length: int, block_size: int) -> int:
    """Number of L*-blocks for ``length`` weights; the last block may be short."""
    return -(-length // block_size)


class PatternTable:
    """
    Bijection between indices [0, 3^L*) and ternary blocks of length L*.

    The table is materialized as a ``(3^L*, L*)`` int8 matrix so decoding is
    a single gather.

    Example:
        >>> table = PatternTable(5)
        >>> table.pattern(121).tolist()
        [1, 1, 1, 1, 1]
        >>> table.index_of([-1, -1, -1, -1, -1])
        242
    """

    def __init__(self, block_size: int = DEFAULT_BLOCK_SIZE) -> None:
        check_block_size(block_size)
        self.block_size = block_size
        self.size = 3**block_size
        self.powers = 3 ** np.arange(block_size, dtype=np.int64)

        idx = np.arange(self.size, dtype=np.int64)
        digits = (idx[:, None] // self.powers[None, :]) % 3
        self.patterns: Int8Array = np.where(digits == 2, -1, digits).astype(np.int8)
        self.patterns.setflags(write=False)

    def pattern(self, index: int) -> Int8Array:
        """
        Look up the ternary block stored under an index.

        Args:
            index: Pattern index in [0, 3^L*)

        Returns:
            Read-only block of L* values, first element least significant

        Raises:
            InvalidIndexError: ``index`` is outside the table
        """
        if not 0 <= index < self.size:
            raise InvalidIndexError(f"invalid index {index} (table size {self.size})")
        return self.patterns[index]

    def index_of(self, block: npt.ArrayLike) -> int:
        """
        Compute the index of a block: sum of d_i * 3^i with 0, 1, -1 as digits 0, 1, 2.

        A short block (the tail of a layer) is read as if padded with zeros.

        Args:
            block: Up to L* values in {-1, 0, 1}

        Raises:
            CodecError: The block is longer than L* or holds a non-ternary value
        """
        values = np.asarray(block, dtype=np.int64).reshape(-1)
        if values.size > self.block_size:
            raise CodecError(f"block of {values.size} values exceeds block size {self.block_size}")
        return int(_digits(values) @ self.powers[: values.size])

    def __len__(self) -> int:
        return self.size


_TABLES: dict[int, PatternTable] = {}


def pattern_table(block_size: int) -> PatternTable:
    """Return the shared (read-only) pattern table for ``block_size``."""
    table = _TABLES.get(block_size)
    if table is None:
        table = _TABLES[block_size] = PatternTable(block_size)
    return table


def _digits(values: npt.NDArray[np.int64]) -> npt.NDArray[np.int64]:
    if values.size and (values.min() < -1 or values.max() > 1):
        raise CodecError("weight indexing needs ternary values in {-1, 0, 1}")
    return np.where(values == -1, 2, values)


@dataclass(frozen=True)
class PackedWeights:
    """
    A ternary tensor stored as block indices.

    Attributes:
        indices: One uint8 index per block, ceil(total_length / block_size) long
        total_length: Number of ternary values encoded (L)
        block_size: Values per index (L*)
        shape: Shape of the original tensor
    """

    indices: UInt8Array
    total_length: int
    block_size: int
    shape: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "indices", np.array(self.indices, dtype=np.uint8).reshape(-1))
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        self.indices.setflags(write=False)
        self.validate()

    def validate(self) -> None:
        """
        Check the container invariants.

        Raises:
            BlockSizeError: Block size unusable with 8-bit indices
            LengthMismatchError: Length, shape and index count disagree
            InvalidIndexError: An index >= 3^block_size
        """
        check_block_size(self.block_size)
        if int(np.prod(self.shape, dtype=np.int64)) != self.total_length:
            raise LengthMismatchError(
                f"shape {self.shape} holds {int(np.prod(self.shape))} values, "
                f"declared total_length is {self.total_length}"
            )
        expected = num_blocks(self.total_length, self.block_size)
        if self.indices.size != expected:
            raise LengthMismatchError(
                f"{self.total_length} values need {expected} indices, found {self.indices.size}"
            )
        limit = 3**self.block_size
        if self.indices.size and int(self.indices.max()) >= limit:
            bad = int(self.indices[self.indices >= limit][0])
            raise InvalidIndexError(f"invalid index {bad} (must be < {limit})")

    @property
    def nbytes(self) -> int:
        """Payload size: one byte per index."""
        return int(self.indices.size)

    def to_bytes(self) -> bytes:
        """Raw index bytes, in block order."""
        return self.indices.tobytes()


def encode_rows(rows: npt.ArrayLike, block_size: int = DEFAULT_BLOCK_SIZE) -> UInt8Array:
    """
    Encode every row of an ``(n, L)`` ternary matrix independently.

    Returns:
        ``(n, ceil(L / block_size))`` uint8 indices
    """
    check_block_size(block_size)
    values = np.asarray(rows, dtype=np.int64)
    if values.ndim != 2:
        raise CodecError(f"encode_rows expects a 2-D array, got {values.ndim}-D")
    n, length = values.shape
    blocks = num_blocks(length, block_size)
    padded = np.zeros((n, blocks * block_size), dtype=np.int64)
    padded[:, :length] = _digits(values)
    powers = 3 ** np.arange(block_size, dtype=np.int64)
    indices = padded.reshape(n, blocks, block_size) @ powers
    return indices.astype(np.uint8)


def decode_rows(
    indices: npt.ArrayLike, length: int, block_size: int = DEFAULT_BLOCK_SIZE
) -> Int8Array:
    """
    Decode an ``(n, blocks)`` index matrix back to ``(n, length)`` ternary values.

    Raises:
        InvalidIndexError: Any index >= 3^block_size
        LengthMismatchError: ``blocks`` does not match ``length``
    """
    table = pattern_table(block_size)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 2:
        raise CodecError(f"decode_rows expects a 2-D array, got {idx.ndim}-D")
    if idx.shape[1] != num_blocks(length, block_size):
        raise LengthMismatchError(
            f"{length} values need {num_blocks(length, block_size)} indices, found {idx.shape[1]}"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= table.size):
        bad = int(idx[(idx < 0) | (idx >= table.size)][0])
        raise InvalidIndexError(f"invalid index {bad} (must be < {table.size})")
    values = table.patterns[idx].reshape(idx.shape[0], -1)
    return values[:, :length]


def encode(ternary: TernaryTensor, block_size: int = DEFAULT_BLOCK_SIZE) -> PackedWeights:
    """
    Pack a ternary tensor into block indices (row-major flattening).

    Args:
        ternary: Tensor with values in {-1, 0, 1}; its beta is not stored here
        block_size: Values per index, at most 5 for 8-bit storage

    Raises:
        BlockSizeError: block_size out of range
        CodecError: Non-ternary values
    """
    flat = np.asarray(ternary.values).reshape(1, -1)
    indices = encode_rows(flat, block_size)[0]
    logger.debug("encoded %d ternary values into %d indices", flat.size, indices.size)
    return PackedWeights(
        indices=indices,
        total_length=int(flat.size),
        block_size=block_size,
        shape=ternary.shape,
    )


def decode(packed: PackedWeights) -> Int8Array:
    """
    Reconstruct the ternary values of ``packed`` in their stored shape.

    The scale is not part of the packed form; wrap the result in a
    :class:`TernaryTensor` with the layer's beta when needed.
    """
    values = decode_rows(packed.indices.reshape(1, -1), packed.total_length, packed.block_size)
    return values.reshape(packed.shape)


def decode_ternary(packed: PackedWeights, beta: float) -> TernaryTensor:
    """Decode ``packed`` and attach the layer scale ``beta``."""
    return TernaryTensor(values=decode(packed), beta=beta)


@dataclass(frozen=True)
class IndexHistogram:
    """Occurrence count of every pattern index."""

    counts: npt.NDArray[np.int64]
    total: int

    def top(self, n: int) -> list[tuple[int, int]]:
        """Return the ``n`` most frequent (index, count) pairs, ties by index."""
        order = sorted(range(self.counts.size), key=lambda i: (-int(self.counts[i]), i))
        return [(i, int(self.counts[i])) for i in order[:n]]

    def as_rows(self) -> list[tuple[int, int]]:
        """All (index, count) pairs in index order, zero counts included."""
        return [(i, int(c)) for i, c in enumerate(self.counts)]


def histogram(
    packed: PackedWeights | Iterable[PackedWeights] | Sequence[int],
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> IndexHistogram:
    """
    Count index occurrences across one or more packed tensors.

    Args:
        packed: A PackedWeights, an iterable of them, or a raw index sequence
        block_size: Table size used when ``packed`` carries no block size
    """
    streams: list[npt.NDArray[Any]]
    if isinstance(packed, PackedWeights):
        streams = [packed.indices]
        block_size = packed.block_size
    else:
        items = list(packed)
        packs = [p for p in items if isinstance(p, PackedWeights)]
        if packs and len(packs) == len(items):
            sizes = {p.block_size for p in packs}
            if len(sizes) > 1:
                raise CodecError(f"cannot merge histograms of block sizes {sorted(sizes)}")
            block_size = sizes.pop()
            streams = [p.indices for p in packs]
        elif packs:
            raise CodecError("histogram input mixes packed tensors and raw indices")
        else:
            streams = [np.asarray(items, dtype=np.int64)]

    size = 3**block_size
    counts = np.zeros(size, dtype=np.int64)
    for stream in streams:
        s = np.asarray(stream, dtype=np.int64)
        if s.size and (s.min() < 0 or s.max() >= size):
            raise InvalidIndexError(f"invalid index in histogram input (table size {size})")
        counts += np.bincount(s, minlength=size)
    return IndexHistogram(counts=counts, total=int(counts.sum()))


class SizeMode(Enum):
    """Storage schemes compared by :func:`packed_size_bytes`."""

    IDEAL = "ideal-1.58"
    RAW_INT8 = "raw-int8"
    INDEXED = "indexed"
    INT4 = "int4"


def packed_size_bytes(num_weights: int, mode: SizeMode | str) -> float:
    """
    Bytes needed to store ``num_weights`` ternary weights.

    - ideal-1.58: num_weights * log2(3) / 8
    - raw-int8: one byte per weight
    - indexed: one byte per block of five
    - int4: two weights per byte

    Example:
        >>> packed_size_bytes(256 * 256 * 5, "indexed") / 1024
        64.0
    """
    if num_weights < 0:
        raise CodecError("num_weights must be non-negative")
    mode = SizeMode(mode)
    if mode is SizeMode.IDEAL:
        return num_weights * float(np.log2(3.0)) / 8.0
    if mode is SizeMode.RAW_INT8:
        return float(num_weights)
    if mode is SizeMode.INDEXED:
        return float(num_blocks(num_weights, DEFAULT_BLOCK_SIZE))
    return float(num_blocks(num_weights, 2))
