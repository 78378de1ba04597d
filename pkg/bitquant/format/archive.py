"""
Binary containers for float inputs (.btw) and quantized outputs (.btq).

All integers are little-endian.

Float archive (.btw)::

    "BITW" | version u8 = 1 | tensor_count u16
    per tensor: name_len u16, name UTF-8, rank u8, dims u32 * rank,
                dtype u8 (0 = float32), payload (4 * prod(dims) bytes)

Quantized archive (.btq)::

    "BITQ" | version u8 = 1 | layer_count u16
    per layer: name_len u16, name UTF-8, kind u8, rank u8, dims u32 * rank,
               [block_size u8]  (kind 0 only)
               [beta f32]       (kinds 0-2)
               huffman_flag u8, payload_len u64, payload

Writers are deterministic; readers reject any trailing bytes.
"""

import logging
import struct
from collections.abc import Iterable, Mapping
from pathlib import Path

import numpy as np
import numpy.typing as npt

from bitquant.codec.huffman import HuffmanCodedPayload, huffman_decode, huffman_encode
from bitquant.errors import (
    ArchiveError,
    BadMagicError,
    CodecError,
    DimensionOverflowError,
    DuplicateNameError,
    InvalidKindError,
    TrailingBytesError,
    TruncatedArchiveError,
    VersionMismatchError,
)
from bitquant.format.records import MAX_DIM, MAX_RANK, LayerKind, LayerRecord, packed_weights
from bitquant.quant.tensors import FloatArray

logger = logging.getLogger(__name__)

FLOAT_MAGIC = b"BITW"
QUANT_MAGIC = b"BITQ"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 0
MAX_ENTRIES = 0xFFFF
MAX_NAME_BYTES = 0xFFFF


class _Reader:
    """Cursor over a byte buffer that raises on truncation."""

    def __init__(self, data: bytes) -> None:
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise TruncatedArchiveError(
                f"archive truncated reading {what} at offset {self.pos} "
                f"(need {n} bytes, {len(self.data) - self.pos} left)"
            )
        chunk = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple[int | float, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def u8(self, what: str) -> int:
        return int(self.unpack("<B", what)[0])

    def u16(self, what: str) -> int:
        return int(self.unpack("<H", what)[0])

    def u64(self, what: str) -> int:
        return int(self.unpack("<Q", what)[0])

    def name(self) -> str:
        raw = self.take(self.u16("name length"), "name")
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ArchiveError(f"tensor name is not valid UTF-8 at offset {self.pos}") from e

    def shape(self) -> tuple[int, ...]:
        rank = self.u8("rank")
        return tuple(int(d) for d in self.unpack(f"<{rank}I", "dims"))

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise TrailingBytesError(f"{len(self.data) - self.pos} trailing bytes after archive")


def _header(reader: _Reader, magic: bytes) -> int:
    got = reader.take(4, "magic")
    if got != magic:
        raise BadMagicError(f"bad magic {got!r}, expected {magic!r}")
    version = reader.u8("version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"unsupported format version {version}")
    return reader.u16("entry count")


def _pack_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > MAX_NAME_BYTES:
        raise DimensionOverflowError(f"name {name[:32]!r}... exceeds {MAX_NAME_BYTES} bytes")
    return struct.pack("<H", len(raw)) + raw


def _pack_shape(shape: tuple[int, ...]) -> bytes:
    if len(shape) > MAX_RANK:
        raise DimensionOverflowError(f"rank {len(shape)} exceeds {MAX_RANK}")
    for d in shape:
        if not 0 <= d <= MAX_DIM:
            raise DimensionOverflowError(f"dimension {d} does not fit in u32")
    return struct.pack(f"<B{len(shape)}I", len(shape), *shape)


def _check_names(names: Iterable[str]) -> int:
    seen: set[str] = set()
    for name in names:
        if name in seen:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        seen.add(name)
    if len(seen) > MAX_ENTRIES:
        raise DimensionOverflowError(f"{len(seen)} entries exceed the u16 count field")
    return len(seen)


# --- float archives -----------------------------------------------------------


def write_float_archive(tensors: Mapping[str, npt.ArrayLike]) -> bytes:
    """Serialize named float tensors (in mapping order) into .btw bytes."""
    count = _check_names(tensors)
    out = bytearray(FLOAT_MAGIC + struct.pack("<BH", FORMAT_VERSION, count))
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f4")
        out += _pack_name(name) + _pack_shape(tuple(arr.shape)) + struct.pack("<B", DTYPE_FLOAT32)
        out += arr.tobytes()
    return bytes(out)


def read_float_archive(data: bytes) -> dict[str, FloatArray]:
    """
    Parse .btw bytes into an ordered ``{name: float32 array}`` mapping.

    Raises:
        ArchiveError: Bad magic/version, truncation, trailing bytes,
            unknown dtype or duplicate names
    """
    reader = _Reader(data)
    count = _header(reader, FLOAT_MAGIC)
    tensors: dict[str, FloatArray] = {}
    for _ in range(count):
        name = reader.name()
        if name in tensors:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        shape = reader.shape()
        dtype = reader.u8("dtype")
        if dtype != DTYPE_FLOAT32:
            raise ArchiveError(f"tensor {name!r}: unsupported dtype code {dtype}")
        n = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(4 * n, f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
    reader.finish()
    return tensors


def save_float_archive(path: Path, tensors: Mapping[str, npt.ArrayLike]) -> None:
    """
    Write named float tensors to a .btw file.

    Args:
        path: Output file, overwritten if present
        tensors: Name to tensor mapping, written in iteration order
    """
    Path(path).write_bytes(write_float_archive(tensors))


def load_float_archive(path: Path) -> dict[str, FloatArray]:
    """
    Read a .btw file.

    Returns:
        Name to float32 tensor mapping, in file order

    Raises:
        ArchiveError: The file is not a valid float archive
        OSError: The file cannot be read
    """
    return read_float_archive(Path(path).read_bytes())


# --- quantized archives -------------------------------------------------------


def _encode_payload(record: LayerRecord) -> bytes:
    if not record.huffman:
        return record.payload
    if not record.payload:
        raise ArchiveError(f"layer {record.name!r}: cannot Huffman-code an empty payload")
    return huffman_encode(record.payload).to_bytes()


def record_header(record: LayerRecord) -> bytes:
    """Bytes written for ``record`` up to (not including) its payload_len field."""
    out = bytearray(_pack_name(record.name))
    out += struct.pack("<B", int(record.kind))
    out += _pack_shape(record.shape)
    if record.kind is LayerKind.TERNARY_INDEXED:
        assert record.block_size is not None
        out += struct.pack("<B", record.block_size)
    if record.kind.has_beta:
        assert record.beta is not None
        out += struct.pack("<f", record.beta)
    out += struct.pack("<B", 1 if record.huffman else 0)
    return bytes(out)


def serialize_record(record: LayerRecord) -> bytes:
    """
    Bytes of one layer entry: header, payload_len and the (possibly Huffman-coded) payload.

    Raises:
        ArchiveError: The payload length does not match kind and shape
    """
    if len(record.payload) != record.expected_payload_len():
        raise ArchiveError(
            f"layer {record.name!r}: payload of {len(record.payload)} bytes, "
            f"{record.expected_payload_len()} expected for {record.kind.name}"
        )
    payload = _encode_payload(record)
    return record_header(record) + struct.pack("<Q", len(payload)) + payload


def write_quant_archive(records: Iterable[LayerRecord]) -> bytes:
    """
    Serialize layer records, in the given order, into .btq bytes.

    Raises:
        DuplicateNameError: Two records share a name
        DimensionOverflowError: A field does not fit its width
        ArchiveError: A payload length disagrees with the record's shape
    """
    records = list(records)
    count = _check_names(r.name for r in records)
    out = bytearray(QUANT_MAGIC + struct.pack("<BH", FORMAT_VERSION, count))
    for record in records:
        out += serialize_record(record)
    logger.debug("wrote quantized archive: %d layers, %d bytes", count, len(out))
    return bytes(out)


def _validate_payload(record: LayerRecord) -> None:
    expected = record.expected_payload_len()
    if len(record.payload) != expected:
        raise ArchiveError(
            f"layer {record.name!r}: payload holds {len(record.payload)} bytes, "
            f"{expected} expected for {record.kind.name} {record.shape}"
        )
    if record.kind is LayerKind.TERNARY_INDEXED:
        # Raises InvalidIndexError for indices >= 3^block_size.
        packed_weights(record)
    elif record.kind is LayerKind.INT4_PACKED and record.num_weights % 2:
        if record.payload[-1] >> 4:
            raise ArchiveError(f"layer {record.name!r}: non-zero padding nibble")


def read_quant_archive(data: bytes) -> list[LayerRecord]:
    """
    Parse .btq bytes back into layer records.

    Raises:
        BadMagicError, VersionMismatchError, TruncatedArchiveError,
        TrailingBytesError, InvalidKindError, DuplicateNameError,
        InvalidIndexError, HuffmanError, ArchiveError
    """
    reader = _Reader(data)
    count = _header(reader, QUANT_MAGIC)
    records: list[LayerRecord] = []
    names: set[str] = set()
    for _ in range(count):
        name = reader.name()
        if name in names:
            raise DuplicateNameError(f"duplicate layer name {name!r}")
        names.add(name)
        kind_code = reader.u8("kind")
        try:
            kind = LayerKind(kind_code)
        except ValueError as e:
            raise InvalidKindError(f"layer {name!r}: invalid kind {kind_code}") from e
        shape = reader.shape()
        block_size = reader.u8("block size") if kind is LayerKind.TERNARY_INDEXED else None
        beta = float(reader.unpack("<f", "beta")[0]) if kind.has_beta else None
        flag = reader.u8("huffman flag")
        if flag not in (0, 1):
            raise ArchiveError(f"layer {name!r}: invalid huffman flag {flag}")
        stored = reader.take(reader.u64("payload length"), f"payload of {name!r}")
        try:
            payload = (
                bytes(huffman_decode(HuffmanCodedPayload.from_bytes(stored))) if flag else stored
            )
            record = LayerRecord(
                name=name,
                kind=kind,
                shape=shape,
                payload=payload,
                beta=beta,
                block_size=block_size,
                huffman=bool(flag),
            )
            _validate_payload(record)
        except CodecError as e:
            raise type(e)(f"layer {name!r}: {e}") from e
        except ArchiveError:
            raise
        except ValueError as e:
            raise ArchiveError(f"layer {name!r}: {e}") from e
        records.append(record)
    reader.finish()
    logger.debug("read quantized archive: %d layers", len(records))
    return records


def save_quant_archive(path: Path, records: Iterable[LayerRecord]) -> int:
    """Write records to ``path``; returns the file size in bytes."""
    data = write_quant_archive(records)
    Path(path).write_bytes(data)
    return len(data)


def load_quant_archive(path: Path) -> list[LayerRecord]:
    """Read a .btq file; raises like :func:`read_quant_archive`."""
    return read_quant_archive(Path(path).read_bytes())
