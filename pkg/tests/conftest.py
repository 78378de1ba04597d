"""
Pytest configuration and shared fixtures.
"""

from pathlib import Path

import numpy as np
import pytest


@pytest.fixture
def rng() -> np.random.Generator:
    """Provide a seeded random generator for property-style tests."""
    return np.random.default_rng(1234)


@pytest.fixture
def quant_config():
    """Provide the default ternary quantization configuration."""
    from bitquant.config import QuantConfig

    return QuantConfig()


@pytest.fixture
def raw_quant_config():
    """Provide a ternary configuration without layer normalization."""
    from bitquant.config import QuantConfig

    return QuantConfig(layer_norm=False)


@pytest.fixture
def codec_config():
    """Provide the default codec configuration (block size 5, no Huffman)."""
    from bitquant.config import CodecConfig

    return CodecConfig()


@pytest.fixture
def small_experiment_config():
    """Provide a tiny teacher-student setup that runs in well under a second."""
    from bitquant.config import ExperimentConfig

    return ExperimentConfig(
        seeds=2,
        train_samples=32,
        eval_samples=16,
        in_channels=2,
        hidden_channels=4,
        out_channels=1,
        num_layers=2,
        kernel_size=3,
        sequence_length=8,
        small_hidden_channels=2,
    )


@pytest.fixture
def small_train_config():
    """Provide a short deterministic training run."""
    from bitquant.config import TrainConfig

    return TrainConfig(steps=5, batch_size=8, learning_rate=0.01, log_every=0)


@pytest.fixture
def float_archive(tmp_path: Path, rng: np.random.Generator) -> Path:
    """Write a small two-tensor .btw archive and return its path."""
    from bitquant.format.archive import save_float_archive

    path = tmp_path / "model.btw"
    save_float_archive(
        path,
        {
            "conv0.weight": rng.standard_normal((8, 4, 3)).astype(np.float32),
            "head.weight": rng.standard_normal((2, 8)).astype(np.float32),
        },
    )
    return path
