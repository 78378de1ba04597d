"""
Quantization-aware training for bitquant.

This module provides a small reverse-mode gradient engine, fake-quantized
layers trained through the straight-through estimator, a post-training
quantization baseline and the QAT-versus-PTQ experiment.
"""

from bitquant.qat.experiment import (
    ExperimentReport,
    SeedResult,
    make_teacher,
    make_teacher_dataset,
    run_experiment,
)
from bitquant.qat.layers import (
    Conv1dStack,
    FakeQuantLayer,
    QuantMode,
    fake_quant_forward,
    ste_backward,
)
from bitquant.qat.trainer import (
    SGD,
    Dataset,
    QuantizedModel,
    TrainResult,
    evaluate,
    inference_model,
    ptq_quantize,
    train,
)

__all__ = [
    "SGD",
    "Conv1dStack",
    "Dataset",
    "ExperimentReport",
    "FakeQuantLayer",
    "QuantMode",
    "QuantizedModel",
    "SeedResult",
    "TrainResult",
    "evaluate",
    "fake_quant_forward",
    "inference_model",
    "make_teacher",
    "make_teacher_dataset",
    "ptq_quantize",
    "run_experiment",
    "ste_backward",
    "train",
]
