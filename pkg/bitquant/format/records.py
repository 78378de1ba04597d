"""
Layer records: the unit of storage in a quantized archive.

A record holds one weight tensor in one of four storage kinds together with
the metadata needed to rebuild it. Records always carry the *plain* payload;
the optional Huffman stage is applied by the archive writer and undone by the
reader, so ``read(write(records)) == records``.
"""

import logging
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
import numpy.typing as npt

from bitquant.codec.index_codec import (
    PackedWeights,
    check_block_size,
    decode,
    encode,
    num_blocks,
)
from bitquant.config import CodecConfig, QuantConfig
from bitquant.errors import ArchiveError, DimensionOverflowError, QuantizationError
from bitquant.quant.quantizers import quantize_b_bit, quantize_ternary
from bitquant.quant.tensors import (
    FloatArray,
    Int8Array,
    IntQuantTensor,
    QuantizedWeights,
    TernaryTensor,
    as_float_tensor,
)

logger = logging.getLogger(__name__)

MAX_DIM = 2**32 - 1
MAX_RANK = 255


class LayerKind(IntEnum):
    """Storage kind byte of a layer record."""

    TERNARY_INDEXED = 0
    INT4_PACKED = 1
    INT8_RAW = 2
    FLOAT32 = 3

    @property
    def has_beta(self) -> bool:
        """Whether records of this kind store a weight scale."""
        return self is not LayerKind.FLOAT32


@dataclass(frozen=True)
class LayerRecord:
    """
    One stored weight tensor.

    Attributes:
        name: Unique tensor name (UTF-8, at most 65535 bytes)
        kind: Storage kind
        shape: Tensor dimensions
        payload: Plain payload bytes for the kind (before any Huffman stage)
        beta: Weight scale, stored as float32 (None for float32 passthrough)
        block_size: Pattern block size (ternary-indexed kind only)
        huffman: Whether the archive entropy-codes this payload
    """

    name: str
    kind: LayerKind
    shape: tuple[int, ...]
    payload: bytes
    beta: float | None = None
    block_size: int | None = None
    huffman: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", LayerKind(self.kind))
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if len(self.shape) > MAX_RANK:
            raise DimensionOverflowError(
                f"layer {self.name!r}: rank {len(self.shape)} > {MAX_RANK}"
            )
        for d in self.shape:
            if not 1 <= d <= MAX_DIM:
                raise DimensionOverflowError(
                    f"layer {self.name!r}: dimension {d} outside [1, {MAX_DIM}]"
                )
        if self.kind.has_beta:
            if self.beta is None:
                raise ArchiveError(f"layer {self.name!r}: kind {self.kind.name} needs a beta")
            object.__setattr__(self, "beta", float(np.float32(self.beta)))
        elif self.beta is not None:
            raise ArchiveError(f"layer {self.name!r}: float32 layers carry no beta")
        if self.kind is LayerKind.TERNARY_INDEXED:
            if self.block_size is None:
                raise ArchiveError(f"layer {self.name!r}: ternary layers need a block size")
            check_block_size(self.block_size)
        elif self.block_size is not None:
            raise ArchiveError(f"layer {self.name!r}: only ternary layers carry a block size")

    @property
    def num_weights(self) -> int:
        """Element count of ``shape``."""
        return int(np.prod(self.shape, dtype=np.int64))

    def expected_payload_len(self) -> int:
        """
        Plain payload length implied by kind, shape and block size.

        Returns:
            ceil(n / L*) for indices, ceil(n / 2) for nibbles, n for int8, 4n for float32
        """
        n = self.num_weights
        if self.kind is LayerKind.TERNARY_INDEXED:
            assert self.block_size is not None
            return num_blocks(n, self.block_size)
        if self.kind is LayerKind.INT4_PACKED:
            return num_blocks(n, 2)
        if self.kind is LayerKind.INT8_RAW:
            return n
        return 4 * n


# --- int4 nibble packing ----------------------------------------------------


def pack_int4(values: npt.ArrayLike) -> bytes:
    """
    Pack signed 4-bit values two per byte, low nibble first.

    An odd count leaves the high nibble of the last byte zero.
    """
    v = np.asarray(values, dtype=np.int64).reshape(-1)
    if v.size and (v.min() < -8 or v.max() > 7):
        raise QuantizationError("int4 packing needs values in [-8, 7]")
    nibbles = (v & 0xF).astype(np.uint8)
    if nibbles.size % 2:
        nibbles = np.append(nibbles, np.uint8(0))
    return (nibbles[0::2] | (nibbles[1::2] << 4)).astype(np.uint8).tobytes()


def unpack_int4(payload: bytes, count: int) -> Int8Array:
    """
    Inverse of :func:`pack_int4`.

    Args:
        payload: Packed bytes, low nibble first
        count: Number of values to keep (drops the padding nibble of an odd count)

    Returns:
        Signed values in [-8, 7]
    """
    raw = np.frombuffer(payload, dtype=np.uint8)
    nibbles = np.empty(raw.size * 2, dtype=np.int16)
    nibbles[0::2] = raw & 0xF
    nibbles[1::2] = raw >> 4
    signed = (nibbles ^ 8) - 8
    return signed[:count].astype(np.int8)


# --- builders ---------------------------------------------------------------


def ternary_record(
    name: str,
    ternary: TernaryTensor,
    *,
    block_size: int = 5,
    indexing: bool = True,
    huffman: bool = False,
) -> LayerRecord:
    """Store a ternary tensor as pattern indices, or as int8 when ``indexing`` is off."""
    if not indexing:
        return int8_record(name, ternary.values, ternary.beta, huffman=huffman)
    packed = encode(ternary, block_size)
    return LayerRecord(
        name=name,
        kind=LayerKind.TERNARY_INDEXED,
        shape=ternary.shape,
        payload=packed.to_bytes(),
        beta=ternary.beta,
        block_size=block_size,
        huffman=huffman,
    )


def int4_record(name: str, quantized: IntQuantTensor, *, huffman: bool = False) -> LayerRecord:
    """
    Store b-bit weights (b <= 4) two per byte.

    Args:
        name: Layer name
        quantized: Integer values and scale
        huffman: Entropy-code the payload when written

    Raises:
        QuantizationError: ``quantized`` is wider than 4 bits
    """
    if quantized.bits > 4:
        raise QuantizationError(f"int4 records hold at most 4-bit values, got {quantized.bits}")
    return LayerRecord(
        name=name,
        kind=LayerKind.INT4_PACKED,
        shape=quantized.shape,
        payload=pack_int4(quantized.values),
        beta=quantized.beta,
        huffman=huffman,
    )


def int8_record(
    name: str, values: npt.ArrayLike, beta: float, *, huffman: bool = False
) -> LayerRecord:
    """Store integer values one signed byte each, with scale ``beta``."""
    v = np.asarray(values)
    return LayerRecord(
        name=name,
        kind=LayerKind.INT8_RAW,
        shape=tuple(v.shape),
        payload=v.astype("<i1").tobytes(),
        beta=beta,
        huffman=huffman,
    )


def float_record(name: str, weights: npt.ArrayLike, *, huffman: bool = False) -> LayerRecord:
    """Store weights unquantized as little-endian float32."""
    w = np.asarray(weights, dtype="<f4")
    return LayerRecord(
        name=name,
        kind=LayerKind.FLOAT32,
        shape=tuple(w.shape),
        payload=w.tobytes(),
        huffman=huffman,
    )


def pack_record(
    name: str, values: npt.ArrayLike, *, block_size: int = 5, huffman: bool = False
) -> LayerRecord:
    """
    Index a tensor that already holds ternary values, losslessly and with beta = 1.

    Raises:
        QuantizationError: A value is not exactly -1, 0 or 1
    """
    v = as_float_tensor(values)
    if not np.all(np.isin(v, (-1.0, 0.0, 1.0))):
        raise QuantizationError(f"layer {name!r} holds values outside {{-1, 0, 1}}")
    ternary = TernaryTensor(values=v.astype(np.int8), beta=1.0)
    return ternary_record(name, ternary, block_size=block_size, huffman=huffman)


def quantize_record(
    name: str,
    weights: npt.ArrayLike,
    quant: QuantConfig,
    codec: CodecConfig,
    *,
    keep_float: bool = False,
) -> LayerRecord:
    """
    Quantize a float tensor and wrap it in the record kind chosen by the configs.

    - keep_float: float32 passthrough
    - ternary: indexed (or int8 when ``codec.indexing`` is off)
    - 4-bit or less: nibble packed (or int8 when ``codec.int4_storage == "int8"``)
    - otherwise: int8
    """
    w = as_float_tensor(weights)
    if keep_float:
        record = float_record(name, w, huffman=codec.huffman)
    elif quant.is_ternary:
        record = ternary_record(
            name,
            quantize_ternary(w, quant),
            block_size=codec.block_size,
            indexing=codec.indexing,
            huffman=codec.huffman,
        )
    else:
        q = quantize_b_bit(w, quant)
        if q.bits <= 4 and codec.int4_storage == "nibble":
            record = int4_record(name, q, huffman=codec.huffman)
        else:
            record = int8_record(name, q.values, q.beta, huffman=codec.huffman)
    logger.info(
        "layer %s %s -> %s (%d bytes)", name, w.shape, record.kind.name, len(record.payload)
    )
    return record


def packed_weights(record: LayerRecord) -> PackedWeights:
    """View the payload of a ternary-indexed record as :class:`PackedWeights`."""
    if record.kind is not LayerKind.TERNARY_INDEXED or record.block_size is None:
        raise ArchiveError(f"layer {record.name!r} is not ternary-indexed")
    return PackedWeights(
        indices=np.frombuffer(record.payload, dtype=np.uint8),
        total_length=record.num_weights,
        block_size=record.block_size,
        shape=record.shape,
    )


def record_weights(
    record: LayerRecord, *, ternary: bool = False
) -> QuantizedWeights | FloatArray:
    """
    Rebuild the in-memory weights of a record.

    The tensor type follows the storage kind, never the stored values.

    Args:
        record: Record to decode
        ternary: Read an int8 record as ternary (written with indexing off)

    Returns:
        TernaryTensor (kind 0, or kind 2 with ``ternary``), IntQuantTensor
        (kind 1 at 4 bits, kind 2 at 8 bits) or float32 array

    Raises:
        QuantizationError: ``ternary`` was requested but a value is outside {-1, 0, 1}
    """
    n = record.num_weights
    if record.kind is LayerKind.TERNARY_INDEXED:
        assert record.beta is not None
        return TernaryTensor(values=decode(packed_weights(record)), beta=record.beta)
    if record.kind is LayerKind.INT4_PACKED:
        assert record.beta is not None
        values = unpack_int4(record.payload, n).reshape(record.shape)
        return IntQuantTensor(values=values, bits=4, beta=record.beta)
    if record.kind is LayerKind.INT8_RAW:
        assert record.beta is not None
        values = np.frombuffer(record.payload, dtype="<i1").astype(np.int8).reshape(record.shape)
        if ternary:
            return TernaryTensor(values=values, beta=record.beta)
        return IntQuantTensor(values=values, bits=8, beta=record.beta)
    return np.frombuffer(record.payload, dtype="<f4").astype(np.float32).reshape(record.shape)


def dequantize_record(record: LayerRecord) -> FloatArray:
    """Return the float32 weights represented by ``record``."""
    weights = record_weights(record)
    if isinstance(weights, (TernaryTensor, IntQuantTensor)):
        return weights.dequantize()
    return weights
