"""
Tests for configuration loading and validation.
"""

from pathlib import Path

import pytest

from bitquant.config import (
    MAX_ACTIVATION_BITS,
    TERNARY_BITS,
    BitQuantConfig,
    CodecConfig,
    ExperimentConfig,
    QuantConfig,
    TrainConfig,
    get_default_config,
)
from bitquant.errors import ConfigError


class TestQuantConfig:
    """Test weight/activation quantization settings."""

    def test_defaults(self) -> None:
        """Test the published default settings."""
        cfg = QuantConfig()
        assert cfg.bits == TERNARY_BITS
        assert cfg.is_ternary
        assert cfg.activation_bits == 8
        assert cfg.epsilon == 1e-5
        assert cfg.rounding == "half_away_from_zero"

    def test_integer_bits_normalized(self) -> None:
        """Test that 4.0 is accepted and stored as the integer 4."""
        cfg = QuantConfig(bits=4.0)
        assert cfg.bits == 4
        assert isinstance(cfg.bits, int)
        assert not cfg.is_ternary

    @pytest.mark.parametrize("bits", [1, 3.5, 9, 16])
    def test_invalid_bits(self, bits: float) -> None:
        """Test that bit widths other than 1.58 and 2..8 are rejected."""
        with pytest.raises(ConfigError):
            QuantConfig(bits=bits)

    @pytest.mark.parametrize("bits", [1, MAX_ACTIVATION_BITS + 1, 48])
    def test_invalid_activation_bits(self, bits: int) -> None:
        """Test that activation precision must lie in [2, 32]."""
        with pytest.raises(ConfigError):
            QuantConfig(activation_bits=bits)

    def test_widest_activation_bits(self) -> None:
        """Test that 32-bit activations are still accepted."""
        assert QuantConfig(activation_bits=MAX_ACTIVATION_BITS).activation_bits == 32

    def test_invalid_epsilon(self) -> None:
        """Test that epsilon must be positive."""
        with pytest.raises(ConfigError):
            QuantConfig(epsilon=0.0)

    def test_invalid_rounding(self) -> None:
        """Test that unknown rounding rules are rejected."""
        with pytest.raises(ConfigError):
            QuantConfig(rounding="stochastic")

    def test_config_error_is_value_error(self) -> None:
        """Test that ConfigError can be caught as ValueError."""
        with pytest.raises(ValueError):
            QuantConfig(epsilon=-1.0)


class TestCodecConfig:
    """Test codec settings."""

    @pytest.mark.parametrize("block_size", [1, 2, 3, 4, 5])
    def test_valid_block_sizes(self, block_size: int) -> None:
        """Test that block sizes up to 5 fit 8-bit indices."""
        assert CodecConfig(block_size=block_size).block_size == block_size

    @pytest.mark.parametrize("block_size", [0, 6])
    def test_invalid_block_sizes(self, block_size: int) -> None:
        """Test that block size 6 (729 patterns) is rejected."""
        with pytest.raises(ConfigError):
            CodecConfig(block_size=block_size)

    def test_invalid_int4_storage(self) -> None:
        """Test int4 storage choice validation."""
        with pytest.raises(ConfigError):
            CodecConfig(int4_storage="packed")


class TestTrainAndExperimentConfig:
    """Test training and experiment settings."""

    def test_zero_steps_allowed(self) -> None:
        """Test that a zero-step run is a valid configuration."""
        assert TrainConfig(steps=0).steps == 0

    def test_default_schedule(self) -> None:
        """Test the default SGD schedule the experiment runs with."""
        cfg = TrainConfig()
        assert (cfg.steps, cfg.batch_size) == (1500, 32)
        assert cfg.learning_rate == 0.01
        assert cfg.momentum == 0.9
        assert cfg.grad_clip is None

    @pytest.mark.parametrize(
        "kwargs",
        [{"batch_size": 0}, {"learning_rate": 0.0}, {"momentum": 1.0}, {"seed": -1}],
    )
    def test_invalid_train_values(self, kwargs: dict) -> None:
        """Test rejection of out-of-range training settings."""
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)

    def test_required_methods_inserted(self) -> None:
        """Test that float, ptq and qat are always part of the method list."""
        cfg = ExperimentConfig(methods=["ptq4"])
        assert cfg.methods[:3] == ["float", "ptq", "qat"]
        assert "ptq4" in cfg.methods

    def test_unknown_method(self) -> None:
        """Test that unknown experiment methods are rejected."""
        with pytest.raises(ConfigError):
            ExperimentConfig(methods=["adamw"])

    def test_invalid_qat_start(self) -> None:
        """Test the QAT start mode validation."""
        with pytest.raises(ConfigError):
            ExperimentConfig(qat_start="resume")


class TestBitQuantConfig:
    """Test the master configuration object."""

    def test_default_config(self) -> None:
        """Test get_default_config returns defaults for every section."""
        cfg = get_default_config()
        assert cfg.codec.block_size == 5
        assert cfg.experiment.seeds == 5
        assert cfg.logging.level == "WARNING"

    def test_from_dict_partial(self) -> None:
        """Test that missing sections and keys fall back to defaults."""
        cfg = BitQuantConfig.from_dict({"quant": {"bits": 4}, "codec": {"huffman": True}})
        assert cfg.quant.bits == 4
        assert cfg.codec.huffman
        assert cfg.codec.block_size == 5

    def test_from_dict_unknown_section(self) -> None:
        """Test that unknown top-level sections are reported."""
        with pytest.raises(ConfigError, match="audio"):
            BitQuantConfig.from_dict({"audio": {}})

    def test_from_dict_unknown_key(self) -> None:
        """Test that unknown keys inside a section are reported."""
        with pytest.raises(ConfigError, match="quant"):
            BitQuantConfig.from_dict({"quant": {"gain": 2}})

    def test_yaml_round_trip(self, tmp_path: Path) -> None:
        """Test saving and loading a configuration through YAML."""
        cfg = BitQuantConfig.from_dict(
            {"train": {"steps": 42}, "experiment": {"methods": ["float", "ptq", "qat", "qat4"]}}
        )
        path = tmp_path / "config.yaml"
        cfg.to_yaml(path)
        loaded = BitQuantConfig.from_yaml(path)
        assert loaded == cfg

    def test_example_config_loads(self) -> None:
        """Test that the shipped example configuration is valid."""
        path = Path(__file__).parent.parent / "example_config.yaml"
        cfg = BitQuantConfig.from_yaml(path)
        assert cfg == get_default_config()

    def test_empty_yaml(self, tmp_path: Path) -> None:
        """Test that an empty YAML file yields the defaults."""
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert BitQuantConfig.from_yaml(path) == get_default_config()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
