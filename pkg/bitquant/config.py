"""
Configuration management for bitquant.

This module provides configuration loading and validation using plain
dataclasses. Default values follow the published quantization settings
(block size 5, 8-bit activations, epsilon 1e-5), and users can override them
via YAML files, command-line flags or the programmatic API.
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from bitquant.errors import ConfigError

TERNARY_BITS = 1.58
"""Sentinel bit width selecting the ternary {-1, 0, 1} mode."""

ROUNDING_MODES = ("half_away_from_zero", "half_even")

MAX_ACTIVATION_BITS = 32
"""Widest activation precision p accepted by QuantConfig."""

KNOWN_METHODS = ("float", "ptq", "qat", "ptq4", "qat4", "small_float", "qat_finetune")
"""Experiment methods; the first three are always run."""


@dataclass
class QuantConfig:
    """Weight and activation quantization settings."""

    bits: float = TERNARY_BITS
    """Weight precision: 1.58 for ternary, or an integer bit width 2..8."""

    activation_bits: int = 8
    """Activation precision p; activations are scaled to (-2^(p-1), 2^(p-1))."""

    epsilon: float = 1e-5
    """Guard added to the weight scale and used as the activation clip margin."""

    rounding: str = "half_away_from_zero"
    """Tie-breaking rule for Round(); half_even is accepted as a variant."""

    layer_norm: bool = True
    """Apply parameter-free layer normalization before activation scaling."""

    layer_norm_eps: float = 1e-5
    """Variance guard of the layer normalization."""

    def __post_init__(self) -> None:
        if self.bits != TERNARY_BITS:
            if float(self.bits) != int(self.bits) or not 2 <= int(self.bits) <= 8:
                raise ConfigError(f"bits must be 1.58 or an integer in [2, 8], got {self.bits}")
            self.bits = int(self.bits)
        if not 2 <= self.activation_bits <= MAX_ACTIVATION_BITS:
            raise ConfigError(
                f"activation_bits must be in [2, {MAX_ACTIVATION_BITS}], got {self.activation_bits}"
            )
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.layer_norm_eps <= 0:
            raise ConfigError(f"layer_norm_eps must be > 0, got {self.layer_norm_eps}")
        if self.rounding not in ROUNDING_MODES:
            raise ConfigError(f"unknown rounding rule {self.rounding!r}")

    @property
    def is_ternary(self) -> bool:
        return self.bits == TERNARY_BITS


@dataclass
class CodecConfig:
    """Storage settings for quantized weights."""

    block_size: int = 5
    """Ternary values per 8-bit index (L*)."""

    huffman: bool = False
    """Entropy-code payloads with a canonical Huffman code."""

    indexing: bool = True
    """Store ternary weights as pattern indices; False stores them as int8."""

    int4_storage: str = "nibble"
    """How 4-bit weights are stored: two per byte ("nibble") or one ("int8")."""

    def __post_init__(self) -> None:
        if self.block_size < 1 or 3**self.block_size > 256:
            raise ConfigError(f"block_size must be in [1, 5], got {self.block_size}")
        if self.int4_storage not in ("nibble", "int8"):
            raise ConfigError(f"int4_storage must be 'nibble' or 'int8', got {self.int4_storage!r}")


@dataclass
class TrainConfig:
    """Training loop settings for fake-quantization training."""

    seed: int = 0
    """Seed for weight initialization and batch sampling."""

    steps: int = 1500
    """Number of optimizer steps."""

    batch_size: int = 32
    """Samples per minibatch."""

    learning_rate: float = 0.01
    """SGD step size."""

    momentum: float = 0.9
    """Heavy-ball momentum; 0.0 gives plain SGD."""

    grad_clip: float | None = None
    """Optional global gradient-norm clip."""

    log_every: int = 100
    """Log the running loss every N steps."""

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")


@dataclass
class ExperimentConfig:
    """Teacher-student QAT vs PTQ comparison settings."""

    seeds: int = 5
    """Number of independent seeds (seed values 0..seeds-1)."""

    train_samples: int = 2048
    eval_samples: int = 512

    in_channels: int = 4
    hidden_channels: int = 16
    out_channels: int = 2

    num_layers: int = 3
    """Conv layers in teacher and student networks (hidden layers use hidden_channels)."""

    kernel_size: int = 5
    sequence_length: int = 32

    small_hidden_channels: int = 4
    """Hidden width of the float "small model" baseline."""

    teacher_sparsity: float = 0.4
    """Fraction of zero weights in the ternary teacher network."""

    noise_std: float = 0.01
    """Gaussian label noise added to teacher outputs."""

    methods: list[str] = field(default_factory=lambda: ["float", "ptq", "qat"])
    """Methods to run; float, ptq and qat are always included."""

    qat_start: str = "scratch"
    """Initialize QAT from scratch or fine-tune the converged float model."""

    def __post_init__(self) -> None:
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        unknown = [m for m in self.methods if m not in KNOWN_METHODS]
        if unknown:
            raise ConfigError(f"unknown experiment methods: {', '.join(unknown)}")
        for required in ("float", "ptq", "qat"):
            if required not in self.methods:
                self.methods.insert(("float", "ptq", "qat").index(required), required)
        if self.qat_start not in ("scratch", "finetune"):
            raise ConfigError(f"qat_start must be 'scratch' or 'finetune', got {self.qat_start!r}")
        if not 0.0 <= self.teacher_sparsity < 1.0:
            raise ConfigError("teacher_sparsity must be in [0, 1)")


@dataclass
class LoggingConfig:
    """Logging setup used by the command-line front end."""

    level: str = "WARNING"
    format: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@dataclass
class BitQuantConfig:
    """Master configuration for bitquant."""

    quant: QuantConfig = field(default_factory=QuantConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    @classmethod
    def from_yaml(cls, path: Path) -> "BitQuantConfig":
        """
        Load configuration from YAML file.

        Args:
            path: Path to YAML configuration file

        Returns:
            BitQuantConfig instance with loaded values

        Raises:
            FileNotFoundError: If config file doesn't exist
            yaml.YAMLError: If YAML parsing fails
            ConfigError: If a value is out of range or a key is unknown
        """
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)

        return cls.from_dict(data or {})

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BitQuantConfig":
        """
        Create configuration from dictionary.

        Args:
            data: Nested dictionary keyed by section name

        Returns:
            BitQuantConfig instance
        """
        sections = {
            "quant": QuantConfig,
            "codec": CodecConfig,
            "train": TrainConfig,
            "experiment": ExperimentConfig,
            "logging": LoggingConfig,
        }
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown configuration sections: {', '.join(sorted(unknown))}")

        kwargs: dict[str, Any] = {}
        for name, section_cls in sections.items():
            try:
                kwargs[name] = section_cls(**(data.get(name) or {}))
            except TypeError as e:
                raise ConfigError(f"invalid [{name}] section: {e}") from e
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        """Plain nested dict of every section, as written by :meth:`to_yaml`."""
        return asdict(self)

    def to_yaml(self, path: Path) -> None:
        """
        Save configuration to YAML file.

        Args:
            path: Output path for YAML file
        """
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.to_dict(), f, default_flow_style=False, sort_keys=False)


def get_default_config() -> BitQuantConfig:
    """
    Get default configuration.

    Returns:
        BitQuantConfig with all default values
    """
    return BitQuantConfig()
