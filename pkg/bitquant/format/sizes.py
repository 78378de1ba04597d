"""
Storage accounting for quantized archives.

Every layer is compared against its float32 footprint (4 bytes per weight).
``stored_bytes`` is the layer's full record in the archive, metadata
included, so a float32 passthrough layer always costs slightly more than its
raw size.
"""

from collections.abc import Iterable
from dataclasses import dataclass, field

from bitquant.format.archive import record_header, serialize_record
from bitquant.format.records import LayerKind, LayerRecord

FLOAT32_BYTES = 4
ARCHIVE_HEADER_BYTES = 7
PAYLOAD_LEN_BYTES = 8


def reduction_percent(raw: float, stored: float) -> float:
    """
    Relative size reduction (raw - stored) / raw * 100.

    Example:
        >>> round(reduction_percent(25.66, 4.39), 1)
        82.9
    """
    if raw <= 0:
        return 0.0
    return (raw - stored) / raw * 100.0


@dataclass(frozen=True)
class LayerSize:
    """
    Size breakdown of one archived layer.

    Attributes:
        name: Layer name
        kind: Storage kind
        num_weights: Number of weights in the layer
        raw_float_bytes: 4 * num_weights
        payload_bytes: Payload as written (after the optional Huffman stage)
        stored_bytes: payload_bytes plus the record's metadata
    """

    name: str
    kind: LayerKind
    num_weights: int
    raw_float_bytes: int
    payload_bytes: int
    stored_bytes: int

    @property
    def metadata_bytes(self) -> int:
        """Record bytes that are not payload (name, kind, shape, scale, flags)."""
        return self.stored_bytes - self.payload_bytes


@dataclass(frozen=True)
class SizeReport:
    """Per-layer sizes and their totals."""

    layers: list[LayerSize] = field(default_factory=list)

    @property
    def total_raw_bytes(self) -> int:
        return sum(layer.raw_float_bytes for layer in self.layers)

    @property
    def total_payload_bytes(self) -> int:
        return sum(layer.payload_bytes for layer in self.layers)

    @property
    def total_stored_bytes(self) -> int:
        return sum(layer.stored_bytes for layer in self.layers)

    @property
    def archive_bytes(self) -> int:
        """Size of the whole .btq file (layer records plus file header)."""
        return ARCHIVE_HEADER_BYTES + self.total_stored_bytes

    @property
    def reduction_percent(self) -> float:
        """Reduction of stored over raw bytes, rounded to 2 decimals."""
        return round(reduction_percent(self.total_raw_bytes, self.total_stored_bytes), 2)

    @property
    def payload_reduction_percent(self) -> float:
        """Like :attr:`reduction_percent` but counting payload bytes only."""
        return round(reduction_percent(self.total_raw_bytes, self.total_payload_bytes), 2)

    def rows(self) -> list[tuple[str, str, int, int, int, int]]:
        """Table rows (name, kind, weights, raw, payload, stored)."""
        return [
            (
                layer.name,
                layer.kind.name.lower(),
                layer.num_weights,
                layer.raw_float_bytes,
                layer.payload_bytes,
                layer.stored_bytes,
            )
            for layer in self.layers
        ]


def layer_size(record: LayerRecord) -> LayerSize:
    """
    Measure one record as the archive writer would store it.

    Args:
        record: Layer record (a Huffman flag makes the payload the coded one)

    Returns:
        Raw float32, payload and full record sizes in bytes
    """
    stored = len(serialize_record(record))
    payload = stored - len(record_header(record)) - PAYLOAD_LEN_BYTES
    return LayerSize(
        name=record.name,
        kind=record.kind,
        num_weights=record.num_weights,
        raw_float_bytes=FLOAT32_BYTES * record.num_weights,
        payload_bytes=payload,
        stored_bytes=stored,
    )


def size_report(records: Iterable[LayerRecord]) -> SizeReport:
    """
    Compute the size report of an archive's layer records.

    Example:
        A single 327,680-weight ternary layer stores a 65,536-byte payload
        against 1,310,720 raw bytes, a payload reduction of 95.0 %.
    """
    return SizeReport(layers=[layer_size(r) for r in records])
