"""
File formats for bitquant.

Float weights are exchanged as .btw archives, quantized models as .btq
archives built from :class:`LayerRecord` entries.
"""

from bitquant.format.archive import (
    load_float_archive,
    load_quant_archive,
    read_float_archive,
    read_quant_archive,
    save_float_archive,
    save_quant_archive,
    write_float_archive,
    write_quant_archive,
)
from bitquant.format.records import (
    LayerKind,
    LayerRecord,
    dequantize_record,
    float_record,
    int4_record,
    int8_record,
    pack_int4,
    pack_record,
    packed_weights,
    quantize_record,
    record_weights,
    ternary_record,
    unpack_int4,
)
from bitquant.format.sizes import LayerSize, SizeReport, reduction_percent, size_report

__all__ = [
    "LayerKind",
    "LayerRecord",
    "LayerSize",
    "SizeReport",
    "dequantize_record",
    "float_record",
    "int4_record",
    "int8_record",
    "load_float_archive",
    "load_quant_archive",
    "pack_int4",
    "pack_record",
    "packed_weights",
    "quantize_record",
    "read_float_archive",
    "read_quant_archive",
    "record_weights",
    "reduction_percent",
    "save_float_archive",
    "save_quant_archive",
    "size_report",
    "ternary_record",
    "unpack_int4",
    "write_float_archive",
    "write_quant_archive",
]
