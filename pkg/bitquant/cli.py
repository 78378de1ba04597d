"""
Command-line interface for bitquant.

Provides commands to quantize float weight archives, inspect and verify
quantized archives, report storage sizes and run the QAT experiment.

Exit codes:
    0  success
    1  verification failure or no matching layer
    2  input could not be parsed
    3  invalid flags or configuration
    4  training diverged
"""

import argparse
import fnmatch
import logging
import sys
import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import replace
from pathlib import Path
from typing import Any, NoReturn, TypeVar

import numpy.typing as npt
import yaml

from bitquant import __version__
from bitquant.codec.index_codec import SizeMode, histogram, packed_size_bytes
from bitquant.config import (
    BitQuantConfig,
    CodecConfig,
    ExperimentConfig,
    QuantConfig,
    TrainConfig,
    get_default_config,
)
from bitquant.errors import (
    ArchiveError,
    BadMagicError,
    BitQuantError,
    CodecError,
    ConfigError,
    QuantizationError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from bitquant.format.archive import (
    FLOAT_MAGIC,
    QUANT_MAGIC,
    load_float_archive,
    load_quant_archive,
    read_float_archive,
    read_quant_archive,
    save_float_archive,
    save_quant_archive,
)
from bitquant.format.records import (
    LayerKind,
    LayerRecord,
    dequantize_record,
    pack_record,
    packed_weights,
    quantize_record,
    record_weights,
    ternary_record,
)
from bitquant.format.sizes import SizeReport, reduction_percent, size_report
from bitquant.quant.tensors import TernaryTensor

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_PARSE = 2
EXIT_USAGE = 3
EXIT_DIVERGED = 4

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

SectionT = TypeVar("SectionT", QuantConfig, CodecConfig, TrainConfig, ExperimentConfig)


class UsageError(Exception):
    """Raised by the parser instead of exiting with argparse's status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected 'on' or 'off', got {value!r}")
    return value == "on"


def _bits(value: str) -> float:
    try:
        return float(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid bit width {value!r}") from e


# --- configuration ----------------------------------------------------------


def _apply_overrides(section: SectionT, **overrides: Any) -> SectionT:
    """Return ``section`` with every non-None override applied (re-validated)."""
    values = {k: v for k, v in overrides.items() if v is not None}
    return replace(section, **values) if values else section


def quant_settings(args: argparse.Namespace, config: BitQuantConfig) -> QuantConfig:
    """Quantization settings from the config file with the command's quantization flags applied."""
    return _apply_overrides(
        config.quant,
        bits=args.bits,
        epsilon=args.eps,
        activation_bits=args.activation_bits,
    )


def codec_settings(args: argparse.Namespace, config: BitQuantConfig) -> CodecConfig:
    """Codec settings from the config file with the command's codec flags applied."""
    return _apply_overrides(
        config.codec,
        block_size=args.block_size,
        huffman=args.huffman,
        indexing=getattr(args, "indexing", None),
        int4_storage=getattr(args, "int4_storage", None),
    )


def _keep_float(name: str, patterns: Sequence[str] | None) -> bool:
    return any(fnmatch.fnmatchcase(name, p) for p in patterns or ())


def quantize_archive(
    tensors: Mapping[str, npt.ArrayLike],
    quant: QuantConfig,
    codec: CodecConfig,
    keep_float: Sequence[str] | None = None,
) -> list[LayerRecord]:
    """Quantize every tensor of a float archive in archive order."""
    return [
        quantize_record(name, w, quant, codec, keep_float=_keep_float(name, keep_float))
        for name, w in tensors.items()
    ]


def _format_report(report: SizeReport) -> str:
    lines = ["name\tkind\tweights\traw_bytes\tpayload_bytes\tstored_bytes"]
    lines += ["\t".join(str(cell) for cell in row) for row in report.rows()]
    lines.append(
        f"total\t-\t{sum(layer.num_weights for layer in report.layers)}"
        f"\t{report.total_raw_bytes}\t{report.total_payload_bytes}\t{report.total_stored_bytes}"
    )
    lines.append(f"reduction\t{report.reduction_percent:.2f}%")
    return "\n".join(lines)


# --- commands ---------------------------------------------------------------


def cmd_quantize(args: argparse.Namespace, config: BitQuantConfig) -> int:
    """Quantize a .btw archive into a .btq archive and print its size report."""
    quant = quant_settings(args, config)
    codec = codec_settings(args, config)
    tensors = load_float_archive(args.input)
    records = quantize_archive(tensors, quant, codec, args.keep_float)
    size = save_quant_archive(args.output, records)
    logger.info("wrote %d layers (%d bytes) to %s", len(records), size, args.output)
    print(_format_report(size_report(records)))
    return EXIT_OK


def cmd_pack(args: argparse.Namespace, config: BitQuantConfig) -> int:
    """Index tensors that already hold ternary values, without rescaling."""
    codec = codec_settings(args, config)
    tensors = load_float_archive(args.input)
    records = [
        pack_record(name, w, block_size=codec.block_size, huffman=codec.huffman)
        for name, w in tensors.items()
    ]
    save_quant_archive(args.output, records)
    print(_format_report(size_report(records)))
    return EXIT_OK


def cmd_unpack(args: argparse.Namespace, config: BitQuantConfig) -> int:
    """Dequantize a .btq archive back into a float .btw archive."""
    records = load_quant_archive(args.input)
    save_float_archive(args.output, {r.name: dequantize_record(r) for r in records})
    logger.info("unpacked %d layers to %s", len(records), args.output)
    return EXIT_OK


def _decode_ms(record: LayerRecord, repeats: int = 5) -> float:
    start = time.perf_counter()
    for _ in range(repeats):
        record_weights(record)
    return (time.perf_counter() - start) * 1000.0 / repeats


def cmd_inspect(args: argparse.Namespace, config: BitQuantConfig) -> int:
    """Print per-layer metadata of a .btq or .btw archive."""
    data = Path(args.input).read_bytes()
    if data[:4] == FLOAT_MAGIC:
        tensors = read_float_archive(data)
        print("name\tdtype\tshape")
        for name, w in tensors.items():
            print(f"{name}\tfloat32\t{'x'.join(map(str, w.shape))}")
        return EXIT_OK

    if data[:4] != QUANT_MAGIC:
        raise BadMagicError(f"{args.input}: bad magic {data[:4]!r}")
    records = read_quant_archive(data)
    header = ["name", "kind", "shape", "beta", "block_size", "huffman", "payload_bytes"]
    if args.timing:
        header += ["decode_ms", "raw_decode_ms"]
    print("\t".join(header))
    for r in records:
        cells = [
            r.name,
            r.kind.name.lower(),
            "x".join(map(str, r.shape)),
            "-" if r.beta is None else f"{r.beta:.8g}",
            "-" if r.block_size is None else str(r.block_size),
            "on" if r.huffman else "off",
            str(len(r.payload)),
        ]
        if args.timing:
            cells.append(f"{_decode_ms(r):.3f}")
            if r.kind is LayerKind.TERNARY_INDEXED:
                weights = record_weights(r)
                assert isinstance(weights, TernaryTensor)
                raw = ternary_record(r.name, weights, indexing=False)
                cells.append(f"{_decode_ms(raw):.3f}")
            else:
                cells.append("-")
        print("\t".join(cells))
    return EXIT_OK


def cmd_histogram(args: argparse.Namespace, config: BitQuantConfig) -> int:
    """Count pattern indices over the matching ternary-indexed layers."""
    records = load_quant_archive(args.input)
    selected = [
        r
        for r in records
        if r.kind is LayerKind.TERNARY_INDEXED and fnmatch.fnmatchcase(r.name, args.layer)
    ]
    if not selected:
        print(f"error: no ternary-indexed layer matches {args.layer!r}", file=sys.stderr)
        return EXIT_VERIFY

    hist = histogram([packed_weights(r) for r in selected])
    sep = "," if args.format == "csv" else "\t"
    rows = hist.top(args.top) if args.top is not None else hist.as_rows()
    print(f"index{sep}count")
    for index, count in rows:
        print(f"{index}{sep}{count}")

    if args.png is not None:
        from bitquant.graphics.histogram_chart import render_histogram

        render_histogram(hist, output_path=args.png)
    return EXIT_OK


def cmd_sizes(args: argparse.Namespace, config: BitQuantConfig) -> int:
    """Print storage sizes per mode and/or the reduction between two sizes."""
    if args.weights is None and args.raw_mb is None and args.stored_mb is None:
        raise UsageError("sizes: give --weights N and/or --raw-mb X --stored-mb Y")
    if (args.raw_mb is None) != (args.stored_mb is None):
        raise UsageError("sizes: --raw-mb and --stored-mb go together")

    if args.weights is not None:
        if args.weights < 0:
            raise UsageError(f"sizes: --weights must be >= 0, got {args.weights}")
        print("mode\tbytes\tKiB")
        for mode in SizeMode:
            size = packed_size_bytes(args.weights, mode)
            cell = f"{size:.2f}" if mode is SizeMode.IDEAL else str(int(size))
            print(f"{mode.value}\t{cell}\t{size / 1024:.2f}")
    if args.raw_mb is not None:
        print(f"reduction\t{reduction_percent(args.raw_mb, args.stored_mb):.1f}%")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, config: BitQuantConfig) -> int:
    """Re-quantize the float source and compare it with the stored archive."""
    quant = quant_settings(args, config)
    codec = codec_settings(args, config)
    try:
        stored = load_quant_archive(args.input)
    except CodecError as e:
        # A stored layer that no longer decodes fails verification.
        print(f"verify: {e}", file=sys.stderr)
        return EXIT_VERIFY
    source = load_float_archive(args.against)

    names = [r.name for r in stored]
    if set(names) != set(source):
        missing = sorted(set(source) ^ set(names))
        print(f"verify: layer sets differ: {', '.join(missing)}", file=sys.stderr)
        return EXIT_VERIFY

    for record in stored:
        expected = quantize_record(
            record.name,
            source[record.name],
            quant,
            codec,
            keep_float=_keep_float(record.name, args.keep_float),
        )
        problem = _compare_records(record, expected, args.tolerance)
        if problem is not None:
            print(f"verify: layer {record.name}: {problem}", file=sys.stderr)
            return EXIT_VERIFY

    print(f"OK\t{len(stored)} layers verified")
    return EXIT_OK


def _compare_records(stored: LayerRecord, expected: LayerRecord, tolerance: float) -> str | None:
    if stored.kind is not expected.kind:
        return f"kind {stored.kind.name} != {expected.kind.name}"
    if stored.shape != expected.shape:
        return f"shape {stored.shape} != {expected.shape}"
    if stored.block_size != expected.block_size:
        return f"block size {stored.block_size} != {expected.block_size} (check --block-size)"
    if stored.huffman != expected.huffman:
        return "huffman flag differs (check --huffman)"
    if len(stored.payload) != len(expected.payload):
        return (
            f"payload length {len(stored.payload)} != {len(expected.payload)}"
            " (check --bits and --block-size)"
        )
    if stored.payload != expected.payload:
        offset = next(
            i for i, (a, b) in enumerate(zip(stored.payload, expected.payload)) if a != b
        )
        return f"payload differs at byte {offset}"
    if stored.beta is not None and expected.beta is not None:
        if abs(stored.beta - expected.beta) > tolerance * abs(expected.beta):
            return f"beta {stored.beta!r} != {expected.beta!r}"
    return None


def cmd_experiment(args: argparse.Namespace, config: BitQuantConfig) -> int:
    """Run the QAT versus PTQ comparison and print its summary."""
    from bitquant.qat.experiment import run_experiment

    methods = None
    if args.methods is not None:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    experiment = _apply_overrides(
        config.experiment, seeds=args.seeds, methods=methods, qat_start=args.qat_start
    )
    train_cfg = _apply_overrides(config.train, steps=args.steps)
    quant = quant_settings(args, config)
    codec = codec_settings(args, config)

    report = run_experiment(experiment, train_cfg, quant, save_dir=args.save_dir, codec=codec)
    if args.output is not None:
        report.write(args.output)
        logger.info("wrote report for %d seeds to %s", len(report.results), args.output)
    else:
        sys.stdout.write(report.to_text())
    print(report.format_summary())
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def _add_quant_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--bits", type=_bits, help="Weight bits: 1.58, or 2..8")
    parser.add_argument("--eps", type=float, help="Quantization epsilon (default 1e-5)")
    parser.add_argument("--activation-bits", type=int, help="Activation bits p (default 8)")


def _add_codec_flags(parser: argparse.ArgumentParser, storage: bool = True) -> None:
    parser.add_argument("--block-size", type=int, help="Ternary values per index (default 5)")
    parser.add_argument("--huffman", type=_on_off, metavar="on|off", help="Entropy-code payloads")
    if storage:
        parser.add_argument(
            "--indexing", type=_on_off, metavar="on|off", help="Index ternary weights (default on)"
        )
        parser.add_argument(
            "--int4-storage", choices=("nibble", "int8"), help="Storage of 4-bit weights"
        )
        parser.add_argument(
            "--keep-float",
            action="append",
            metavar="GLOB",
            help="Store matching tensors as float32 (repeatable)",
        )


def build_parser() -> argparse.ArgumentParser:
    """
    Create the argument parser with one subcommand per operation.

    Returns:
        Parser that raises :class:`UsageError` instead of exiting
    """
    parser = _Parser(
        prog="bitquant",
        description="1.58-bit weight quantization, indexing and QAT toolkit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )

    parser.add_argument(
        "--version",
        action="version",
        version=f"%(prog)s {__version__}",
    )

    parser.add_argument(
        "--config",
        type=Path,
        help="Path to configuration YAML file",
        metavar="PATH",
    )

    parser.add_argument("--log-level", choices=LOG_LEVELS, help="Logging level")
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="More logging (-vv for debug)"
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    p = subparsers.add_parser("quantize", help="Quantize a float archive (.btw -> .btq)")
    p.add_argument("--in", dest="input", type=Path, required=True, metavar="FILE")
    p.add_argument("--out", dest="output", type=Path, required=True, metavar="FILE")
    _add_quant_flags(p)
    _add_codec_flags(p)

    p = subparsers.add_parser("pack", help="Index already-ternary tensors (.btw -> .btq)")
    p.add_argument("--in", dest="input", type=Path, required=True, metavar="FILE")
    p.add_argument("--out", dest="output", type=Path, required=True, metavar="FILE")
    _add_codec_flags(p, storage=False)

    p = subparsers.add_parser("unpack", help="Dequantize a .btq archive into a .btw archive")
    p.add_argument("--in", dest="input", type=Path, required=True, metavar="FILE")
    p.add_argument("--out", dest="output", type=Path, required=True, metavar="FILE")

    p = subparsers.add_parser("inspect", help="Show per-layer metadata of an archive")
    p.add_argument("--in", dest="input", type=Path, required=True, metavar="FILE")
    p.add_argument("--timing", action="store_true", help="Report decode time per layer")

    p = subparsers.add_parser("histogram", help="Pattern index frequencies")
    p.add_argument("--in", dest="input", type=Path, required=True, metavar="FILE")
    p.add_argument("--layer", default="*", metavar="GLOB", help="Layer name pattern")
    p.add_argument("--format", choices=("csv", "tsv"), default="csv")
    p.add_argument("--top", type=int, metavar="N", help="Only the N most frequent indices")
    p.add_argument("--png", type=Path, metavar="PATH", help="Also render a bar chart")

    p = subparsers.add_parser("sizes", help="Storage size arithmetic")
    p.add_argument("--weights", type=int, metavar="N", help="Number of ternary weights")
    p.add_argument("--raw-mb", type=float, metavar="X", help="Raw model size")
    p.add_argument("--stored-mb", type=float, metavar="Y", help="Stored model size")

    p = subparsers.add_parser("verify", help="Check a .btq archive against its float source")
    p.add_argument("--in", dest="input", type=Path, required=True, metavar="FILE")
    p.add_argument("--against", type=Path, required=True, metavar="FILE")
    p.add_argument(
        "--tolerance", type=float, default=0.0, help="Relative tolerance on beta (default exact)"
    )
    _add_quant_flags(p)
    _add_codec_flags(p)

    p = subparsers.add_parser("experiment", help="Run the QAT vs PTQ comparison")
    p.add_argument("--seeds", type=int, metavar="K")
    p.add_argument("--steps", type=int, metavar="N")
    p.add_argument("--out", dest="output", type=Path, metavar="FILE", help="Report path")
    p.add_argument("--methods", metavar="LIST", help="Comma-separated extra methods")
    p.add_argument("--qat-start", choices=("scratch", "finetune"))
    p.add_argument("--save-dir", type=Path, metavar="DIR", help="Save trained models here")
    _add_quant_flags(p)
    _add_codec_flags(p, storage=False)

    return parser


COMMANDS: dict[str, Callable[[argparse.Namespace, BitQuantConfig], int]] = {
    "quantize": cmd_quantize,
    "pack": cmd_pack,
    "unpack": cmd_unpack,
    "inspect": cmd_inspect,
    "histogram": cmd_histogram,
    "sizes": cmd_sizes,
    "verify": cmd_verify,
    "experiment": cmd_experiment,
}


def setup_logging(args: argparse.Namespace, config: BitQuantConfig) -> None:
    """
    Configure root logging on stderr.

    ``-v`` selects INFO and ``-vv`` DEBUG; otherwise ``--log-level``, then the config file.
    """
    level = args.log_level or config.logging.level
    if args.verbose:
        level = "DEBUG" if args.verbose > 1 else "INFO"
    logging.basicConfig(
        stream=sys.stderr, level=level.upper(), format=config.logging.format, force=True
    )


def exit_code(error: BaseException) -> int:
    """Map an exception onto the stable exit codes."""
    if isinstance(error, TrainingDivergedError):
        return EXIT_DIVERGED
    if isinstance(error, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(
        error,
        (ArchiveError, CodecError, QuantizationError, ShapeMismatchError, OSError, yaml.YAMLError),
    ):
        return EXIT_PARSE
    return EXIT_VERIFY


def main(argv: Sequence[str] | None = None) -> int:
    """
    Main entry point for CLI.

    Args:
        argv: Command-line arguments (defaults to sys.argv)

    Returns:
        Exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE

    if args.command is None:
        parser.print_help()
        return EXIT_OK

    try:
        config = BitQuantConfig.from_yaml(args.config) if args.config else get_default_config()
    except (OSError, yaml.YAMLError, BitQuantError) as e:
        print(f"Error loading configuration: {e}", file=sys.stderr)
        return exit_code(e)

    setup_logging(args, config)

    try:
        return COMMANDS[args.command](args, config)
    except (UsageError, BitQuantError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return exit_code(e)


if __name__ == "__main__":
    sys.exit(main())
