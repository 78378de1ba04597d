"""
QAT versus PTQ comparison on a teacher-student conv1d regression task.

A random ternary teacher network generates targets from Gaussian inputs.
For every seed a float student is trained and post-training quantized, and a
ternary student is trained with fake quantization. Eval losses of all methods
go into an :class:`ExperimentReport`, one tab-separated row per seed.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import numpy.typing as npt

from bitquant.config import (
    TERNARY_BITS,
    CodecConfig,
    ExperimentConfig,
    QuantConfig,
    TrainConfig,
)
from bitquant.errors import ConfigError
from bitquant.format.archive import save_float_archive, save_quant_archive
from bitquant.qat.layers import Conv1dStack, QuantMode
from bitquant.qat.trainer import Dataset, evaluate, inference_model, ptq_quantize, train

logger = logging.getLogger(__name__)

LOSS_FORMAT = ".10e"


def _channels(cfg: ExperimentConfig, hidden: int) -> list[int]:
    return [cfg.in_channels] + [hidden] * (cfg.num_layers - 1) + [cfg.out_channels]


def make_teacher(cfg: ExperimentConfig, quant: QuantConfig, seed: int) -> Conv1dStack:
    """
    Build the ternary teacher network.

    Every weight is 0 with probability ``teacher_sparsity`` and +-1/sqrt(fan_in)
    otherwise. Targets come from the teacher's ternary inference path, so a
    ternary student of the same shape can represent them exactly.
    """
    ternary = replace(quant, bits=TERNARY_BITS)
    teacher = Conv1dStack(
        _channels(cfg, cfg.hidden_channels), cfg.kernel_size, ternary, QuantMode.TERNARY
    )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    half = (1.0 - cfg.teacher_sparsity) / 2.0
    for layer in teacher.layers:
        probs = [half, 1.0 - 2 * half, half]
        pattern = rng.choice([-1.0, 0.0, 1.0], size=layer.weights.shape, p=probs)
        fan_in = layer.weights.shape[1] * layer.weights.shape[2]
        layer.weights = (pattern / np.sqrt(fan_in)).astype(np.float32)
    return teacher


def make_teacher_dataset(
    cfg: ExperimentConfig, quant: QuantConfig, seed: int
) -> tuple[Dataset, Dataset]:
    """
    Generate (train, eval) sets from the seed's teacher network.

    Inputs are standard normal ``(N, in_channels, sequence_length)``; targets
    are the teacher's kernel-path outputs plus Gaussian noise.
    """
    teacher = inference_model(make_teacher(cfg, quant, seed))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))

    def sample(n: int) -> Dataset:
        x = rng.standard_normal((n, cfg.in_channels, cfg.sequence_length)).astype(np.float32)
        y = teacher.predict(x)
        noise = cfg.noise_std * rng.standard_normal(y.shape)
        return Dataset(inputs=x, targets=(y + noise).astype(np.float32))

    return sample(cfg.train_samples), sample(cfg.eval_samples)


@dataclass
class SeedResult:
    """Eval loss of every method for one seed."""

    seed: int
    losses: dict[str, float] = field(default_factory=dict)


@dataclass
class ExperimentReport:
    """
    Eval losses per seed and method.

    Attributes:
        methods: Column order (float, ptq, qat, then any extra methods)
        results: One entry per seed
    """

    methods: list[str]
    results: list[SeedResult] = field(default_factory=list)

    def header(self) -> str:
        return "\t".join(["seed"] + [f"{m}_loss" for m in self.methods])

    def to_text(self) -> str:
        """
        Render the report as TSV.

        The header is ``seed`` then ``<method>_loss`` per method; losses use
        10-digit scientific notation so identical runs give identical text.
        """
        lines = [self.header()]
        for r in self.results:
            cells = [str(r.seed)] + [format(r.losses[m], LOSS_FORMAT) for m in self.methods]
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"

    def write(self, path: Path) -> None:
        """Write :meth:`to_text` to ``path``."""
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "ExperimentReport":
        """
        Parse a report written by :meth:`to_text`.

        Raises:
            ConfigError: Empty text, a foreign header or a short row
        """
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines:
            raise ConfigError("empty experiment report")
        columns = lines[0].split("\t")
        if columns[0] != "seed" or not all(c.endswith("_loss") for c in columns[1:]):
            raise ConfigError(f"unexpected report header: {lines[0]!r}")
        methods = [c[: -len("_loss")] for c in columns[1:]]
        report = cls(methods=methods)
        for line in lines[1:]:
            cells = line.split("\t")
            if len(cells) != len(columns):
                raise ConfigError(f"report row has {len(cells)} cells, expected {len(columns)}")
            report.results.append(
                SeedResult(int(cells[0]), {m: float(v) for m, v in zip(methods, cells[1:])})
            )
        return report

    @classmethod
    def read(cls, path: Path) -> "ExperimentReport":
        """Read a report file; raises like :meth:`from_text`."""
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def losses(self, method: str) -> npt.NDArray[np.float64]:
        """Loss of ``method`` for every seed, in seed order."""
        return np.array([r.losses[method] for r in self.results], dtype=np.float64)

    def summary(self) -> dict[str, tuple[float, float]]:
        """Mean and (population) standard deviation of each method's loss."""
        return {
            m: (float(self.losses(m).mean()), float(self.losses(m).std())) for m in self.methods
        }

    def passes(self) -> bool:
        """
        True when mean QAT loss is below mean PTQ loss by more than the
        across-seed standard deviation of the QAT losses.
        """
        stats = self.summary()
        qat_mean, qat_std = stats["qat"]
        ptq_mean, _ = stats["ptq"]
        return qat_mean < ptq_mean and (ptq_mean - qat_mean) > qat_std

    def float_at_most_qat(self) -> int:
        """Number of seeds where the float loss does not exceed the QAT loss."""
        return sum(1 for r in self.results if r.losses["float"] <= r.losses["qat"])

    def format_summary(self) -> str:
        """Human-readable mean/std table plus the float and QAT/PTQ checks."""
        rows = [f"{'method':<14}{'mean':>16}{'std':>16}"]
        for method, (mean, std) in self.summary().items():
            rows.append(f"{method:<14}{mean:>16.6e}{std:>16.6e}")
        rows.append(f"float <= qat on {self.float_at_most_qat()}/{len(self.results)} seeds")
        rows.append(f"qat < ptq: {'PASS' if self.passes() else 'FAIL'}")
        return "\n".join(rows)


def _train_and_eval(
    model: Conv1dStack, train_set: Dataset, eval_set: Dataset, cfg: TrainConfig
) -> tuple[Conv1dStack, float]:
    trained = train(model, train_set, cfg).model
    return trained, evaluate(inference_model(trained), eval_set)


def run_seed(
    seed: int,
    cfg: ExperimentConfig,
    train_cfg: TrainConfig,
    quant: QuantConfig,
    save_dir: Path | None = None,
    codec: CodecConfig | None = None,
) -> SeedResult:
    """Train and evaluate every configured method for one seed."""
    train_set, eval_set = make_teacher_dataset(cfg, quant, seed)
    seeded = replace(train_cfg, seed=seed)
    ternary = replace(quant, bits=TERNARY_BITS)
    four_bit = replace(quant, bits=4)
    channels = _channels(cfg, cfg.hidden_channels)
    result = SeedResult(seed)

    float_model, result.losses["float"] = _train_and_eval(
        Conv1dStack(channels, cfg.kernel_size, quant, QuantMode.FLOAT, seed=seed),
        train_set,
        eval_set,
        seeded,
    )
    result.losses["ptq"] = evaluate(ptq_quantize(float_model, ternary), eval_set)

    if cfg.qat_start == "finetune":
        qat_init = float_model.with_config(ternary, QuantMode.TERNARY)
    else:
        qat_init = Conv1dStack(channels, cfg.kernel_size, ternary, QuantMode.TERNARY, seed=seed)
    qat_model, result.losses["qat"] = _train_and_eval(qat_init, train_set, eval_set, seeded)

    if "ptq4" in cfg.methods:
        result.losses["ptq4"] = evaluate(ptq_quantize(float_model, four_bit), eval_set)
    if "qat4" in cfg.methods:
        _, result.losses["qat4"] = _train_and_eval(
            Conv1dStack(channels, cfg.kernel_size, four_bit, QuantMode.B_BIT, seed=seed),
            train_set,
            eval_set,
            seeded,
        )
    if "small_float" in cfg.methods:
        small = _channels(cfg, cfg.small_hidden_channels)
        _, result.losses["small_float"] = _train_and_eval(
            Conv1dStack(small, cfg.kernel_size, quant, QuantMode.FLOAT, seed=seed),
            train_set,
            eval_set,
            seeded,
        )
    if "qat_finetune" in cfg.methods:
        _, result.losses["qat_finetune"] = _train_and_eval(
            float_model.with_config(ternary, QuantMode.TERNARY), train_set, eval_set, seeded
        )

    if save_dir is not None:
        save_dir.mkdir(parents=True, exist_ok=True)
        save_quant_archive(
            save_dir / f"seed{seed}_qat.btq", qat_model.to_layer_records(codec or CodecConfig())
        )
        save_float_archive(save_dir / f"seed{seed}_float.btw", float_model.state_dict())

    logger.info(
        "seed %d: %s",
        seed,
        ", ".join(f"{m}={v:.4e}" for m, v in result.losses.items()),
    )
    return result


def run_experiment(
    cfg: ExperimentConfig,
    train_cfg: TrainConfig | None = None,
    quant: QuantConfig | None = None,
    *,
    save_dir: Path | None = None,
    codec: CodecConfig | None = None,
) -> ExperimentReport:
    """
    Run the comparison for seeds 0..cfg.seeds-1.

    Raises:
        TrainingDivergedError: Propagated from training
    """
    train_cfg = train_cfg or TrainConfig()
    quant = quant or QuantConfig()
    base = ["float", "ptq", "qat"]
    report = ExperimentReport(methods=base + [m for m in cfg.methods if m not in base])
    for seed in range(cfg.seeds):
        report.results.append(run_seed(seed, cfg, train_cfg, quant, save_dir, codec))
    return report
