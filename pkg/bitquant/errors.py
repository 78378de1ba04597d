"""
Exception hierarchy for bitquant.

Every error raised by the toolkit derives from :class:`BitQuantError` and
carries a short, stable ``code`` string. The CLI maps these classes onto its
exit codes; library callers can match on either the class or the code.
"""


class BitQuantError(Exception):
    """Base class for all bitquant errors."""

    code: str = "error"

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message


class ConfigError(BitQuantError, ValueError):
    """Invalid configuration value."""

    code = "config"


class QuantizationError(BitQuantError, ValueError):
    """Quantization could not be applied to the given tensor."""

    code = "quantization"


class ShapeMismatchError(BitQuantError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""

    code = "shape"


# --- index codec -----------------------------------------------------------


class CodecError(BitQuantError, ValueError):
    """Base class for weight-indexing and Huffman failures."""

    code = "codec"


class InvalidIndexError(CodecError):
    """An index does not address a pattern of the pattern table."""

    code = "invalid_index"


class LengthMismatchError(CodecError):
    """Declared length disagrees with the number of stored indices."""

    code = "length_mismatch"


class BlockSizeError(CodecError):
    """Block size out of range for 8-bit index storage."""

    code = "block_size"


class HuffmanError(CodecError):
    """Malformed Huffman table or bitstream."""

    code = "huffman"


# --- archives --------------------------------------------------------------


class ArchiveError(BitQuantError, ValueError):
    """Base class for .btw / .btq parse and write failures."""

    code = "archive"


class BadMagicError(ArchiveError):
    code = "bad_magic"


class VersionMismatchError(ArchiveError):
    code = "version_mismatch"


class TruncatedArchiveError(ArchiveError):
    code = "truncated"


class TrailingBytesError(ArchiveError):
    code = "trailing_bytes"


class InvalidKindError(ArchiveError):
    code = "invalid_kind"


class DuplicateNameError(ArchiveError):
    code = "duplicate_name"


class DimensionOverflowError(ArchiveError):
    code = "dim_overflow"


# --- training --------------------------------------------------------------


class BackwardBeforeForwardError(BitQuantError, RuntimeError):
    """Backward was requested on a layer that has no cached forward pass."""

    code = "backward_before_forward"


class TrainingDivergedError(BitQuantError, RuntimeError):
    """Loss became non-finite during training."""

    code = "diverged"

    def __init__(self, step: int, loss: float) -> None:
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss
