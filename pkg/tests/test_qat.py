"""
Tests for fake-quantized layers, training, PTQ and the QAT experiment.
"""

from pathlib import Path

import numpy as np
import pytest

from bitquant.codec import encode
from bitquant.config import CodecConfig, ExperimentConfig, QuantConfig, TrainConfig
from bitquant.errors import (
    BackwardBeforeForwardError,
    ConfigError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from bitquant.format import LayerKind, load_float_archive, load_quant_archive
from bitquant.kernels import (
    Conv1dSpec,
    LinearSpec,
    float_conv1d_forward,
    packed_forward,
    quantized_conv1d_forward,
    quantized_linear_forward,
)
from bitquant.qat import (
    Conv1dStack,
    Dataset,
    ExperimentReport,
    FakeQuantLayer,
    QuantMode,
    SeedResult,
    evaluate,
    fake_quant_forward,
    inference_model,
    make_teacher,
    make_teacher_dataset,
    ptq_quantize,
    run_experiment,
    ste_backward,
    train,
)
from bitquant.qat import autograd as ag
from bitquant.quant import IntQuantTensor, TernaryTensor


def toy_dataset(rng: np.random.Generator, n: int = 16) -> Dataset:
    x = rng.standard_normal((n, 2, 8)).astype(np.float32)
    y = (0.5 * x[:, :1, :] - 0.25 * x[:, 1:, :]).astype(np.float32)
    return Dataset(inputs=x, targets=y)


def noisy_linear_dataset(
    rng: np.random.Generator, n: int, noise_std: float
) -> tuple[Dataset, float]:
    """Linear targets plus Gaussian noise, with the noise floor (mean squared noise)."""
    x = rng.standard_normal((n, 2, 8))
    noise = noise_std * rng.standard_normal((n, 1, 8))
    y = 0.5 * x[:, :1, :] - 0.25 * x[:, 1:, :] + noise
    data = Dataset(inputs=x.astype(np.float32), targets=y.astype(np.float32))
    return data, float(np.mean(noise**2))


class TestFakeQuantLayer:
    """Test that training forwards match inference bit for bit."""

    def test_effective_weights(self) -> None:
        """Test the dequantized weights of the hand example."""
        layer = FakeQuantLayer("fc", LinearSpec(4, 1), QuantConfig(),
                               weights=[[0.5, -0.2, 0.1, -0.9]])
        np.testing.assert_allclose(layer.effective_weights(), [[0.425, 0, 0, -0.425]], rtol=1e-6)

    def test_conv_matches_kernels(self, rng: np.random.Generator) -> None:
        """Test ternary fake-quant conv against the dense and packed kernels."""
        cfg = QuantConfig()
        spec = Conv1dSpec(3, 4, 3, padding=1)
        for _ in range(50):
            layer = FakeQuantLayer("c", spec, cfg, rng=rng)
            x = rng.standard_normal((3, 10)).astype(np.float32)
            q = layer.quantized()
            assert isinstance(q, TernaryTensor)
            y = fake_quant_forward(layer, x)
            assert y.dtype == np.float32
            assert np.array_equal(y, quantized_conv1d_forward(x, spec, q, cfg))
            assert np.array_equal(y, packed_forward(x, spec, encode(q), q.beta, cfg))

    def test_linear_matches_kernels(self, rng: np.random.Generator) -> None:
        """Test the linear fake-quant path, ternary and 4-bit."""
        for cfg in (QuantConfig(), QuantConfig(bits=4)):
            layer = FakeQuantLayer("fc", LinearSpec(6, 3), cfg, rng=rng)
            x = rng.standard_normal((5, 6)).astype(np.float32)
            q = layer.quantized()
            assert q is not None
            assert np.array_equal(fake_quant_forward(layer, x), quantized_linear_forward(x, q, cfg))

    def test_float_mode(self, rng: np.random.Generator) -> None:
        """Test that float layers match the float kernel."""
        cfg = QuantConfig()
        spec = Conv1dSpec(2, 2, 3)
        layer = FakeQuantLayer("c", spec, cfg, QuantMode.FLOAT, rng=rng)
        assert layer.quantized() is None
        x = rng.standard_normal((2, 6)).astype(np.float32)
        assert np.array_equal(fake_quant_forward(layer, x),
                              float_conv1d_forward(x, spec, layer.weights, cfg))

    def test_mode_must_match_config(self) -> None:
        """Test that b-bit mode refuses the ternary setting."""
        with pytest.raises(ConfigError):
            FakeQuantLayer("c", LinearSpec(2, 2), QuantConfig(), QuantMode.B_BIT)

    def test_weight_shape_checked(self) -> None:
        """Test that explicit weights must match the layer."""
        with pytest.raises(ShapeMismatchError):
            FakeQuantLayer("c", LinearSpec(2, 2), QuantConfig(), weights=np.ones((3, 2)))


class TestSteBackward:
    """Test the straight-through weight gradient."""

    def test_before_forward(self) -> None:
        """Test that a backward without forward is refused."""
        layer = FakeQuantLayer("fc", LinearSpec(3, 2), QuantConfig())
        with pytest.raises(BackwardBeforeForwardError):
            ste_backward(layer, np.ones((2, 3)))

    @pytest.mark.parametrize("mode", [QuantMode.TERNARY, QuantMode.FLOAT])
    def test_identity(self, rng: np.random.Generator, mode: QuantMode) -> None:
        """Test that the master-weight gradient equals the upstream gradient."""
        layer = FakeQuantLayer("fc", LinearSpec(3, 2), QuantConfig(), mode, rng=rng)
        layer.forward(ag.Tensor(rng.standard_normal((1, 3))))
        g = rng.standard_normal((2, 3))
        assert np.array_equal(ste_backward(layer, g), g)

    def test_shape_mismatch(self, rng: np.random.Generator) -> None:
        """Test that the gradient must have the weights' shape."""
        layer = FakeQuantLayer("fc", LinearSpec(3, 2), QuantConfig(), rng=rng)
        layer.forward(ag.Tensor(rng.standard_normal((1, 3))))
        with pytest.raises(ShapeMismatchError):
            ste_backward(layer, np.ones((3, 2)))

    def test_gradient_reaches_master_weights(self, rng: np.random.Generator) -> None:
        """Test that a loss backward fills the layer gradient."""
        layer = FakeQuantLayer("fc", LinearSpec(3, 2), QuantConfig(), rng=rng)
        out = layer.forward(ag.Tensor(rng.standard_normal((4, 3))))
        ag.mse_loss(out, ag.Tensor(np.zeros((4, 2)))).backward()
        assert layer.grad is not None and layer.grad.shape == (2, 3)


class TestConv1dStack:
    """Test the conv stack model."""

    def test_layer_shapes(self) -> None:
        """Test same-padded conv layers between the given channel counts."""
        model = Conv1dStack([4, 16, 2], kernel_size=5, cfg=QuantConfig())
        assert [layer.spec.weight_shape for layer in model.layers] == [(16, 4, 5), (2, 16, 5)]
        assert model.num_weights == 16 * 4 * 5 + 2 * 16 * 5
        assert model.predict(np.zeros((1, 4, 7))).shape == (1, 2, 7)

    def test_state_dict_round_trip(self) -> None:
        """Test copying weights between models."""
        a = Conv1dStack([2, 3, 1], 3, QuantConfig(), seed=1)
        b = Conv1dStack([2, 3, 1], 3, QuantConfig(), seed=2)
        b.load_state_dict(a.state_dict())
        assert list(a.state_dict()) == ["conv0.weight", "conv1.weight"]
        for name, w in a.state_dict().items():
            assert np.array_equal(b.state_dict()[name], w)

    def test_with_config(self) -> None:
        """Test the same weights under another quantization mode."""
        model = Conv1dStack([2, 3, 1], 3, QuantConfig(), QuantMode.FLOAT)
        ternary = model.with_config(QuantConfig(), QuantMode.TERNARY)
        assert ternary.mode is QuantMode.TERNARY
        assert np.array_equal(ternary.layers[0].weights, model.layers[0].weights)

    def test_layer_records(self) -> None:
        """Test the archive kinds of ternary and float models."""
        ternary = Conv1dStack([2, 3, 1], 3, QuantConfig())
        assert {r.kind for r in ternary.to_layer_records(CodecConfig())} == {
            LayerKind.TERNARY_INDEXED
        }
        floats = Conv1dStack([2, 3, 1], 3, QuantConfig(), QuantMode.FLOAT)
        assert {r.kind for r in floats.to_layer_records(CodecConfig())} == {LayerKind.FLOAT32}


class TestTraining:
    """Test the SGD training loop."""

    def test_deterministic(self, rng: np.random.Generator,
                           small_train_config: TrainConfig) -> None:
        """Test that equal seeds give identical loss traces and weights."""
        data = toy_dataset(rng)
        runs = [
            train(Conv1dStack([2, 3, 1], 3, QuantConfig(), seed=7), data, small_train_config)
            for _ in range(2)
        ]
        assert runs[0].losses == runs[1].losses
        for a, b in zip(runs[0].model.layers, runs[1].model.layers):
            assert np.array_equal(a.weights, b.weights)

    def test_zero_steps(self, rng: np.random.Generator) -> None:
        """Test that a zero-step run leaves the model untouched."""
        model = Conv1dStack([2, 3, 1], 3, QuantConfig())
        before = model.state_dict()
        result = train(model, toy_dataset(rng), TrainConfig(steps=0))
        assert result.steps == 0
        assert np.isnan(result.final_loss)
        for name, w in model.state_dict().items():
            assert np.array_equal(w, before[name])

    def test_float_loss_decreases(self, rng: np.random.Generator) -> None:
        """Test that float training fits a linear target."""
        data = toy_dataset(rng, 64)
        model = Conv1dStack([2, 1], 1, QuantConfig(layer_norm=False), QuantMode.FLOAT)
        cfg = TrainConfig(steps=200, batch_size=16, learning_rate=0.05, log_every=0)
        start = evaluate(model, data)
        train(model, data, cfg)
        assert evaluate(model, data) < 0.1 * start

    def test_two_layer_float_reaches_noise_floor(self, rng: np.random.Generator) -> None:
        """Test that a float 2-layer net gets within 0.01 of the noise floor in 2000 steps."""
        noise_std = 0.1
        train_set, _ = noisy_linear_dataset(rng, 512, noise_std)
        eval_set, floor = noisy_linear_dataset(rng, 256, noise_std)
        model = Conv1dStack([2, 16, 1], 1, QuantConfig(layer_norm=False), QuantMode.FLOAT)
        result = train(model, train_set, TrainConfig(steps=2000, log_every=0))
        assert result.steps == 2000
        assert evaluate(model, eval_set) - floor < 0.01

    @pytest.mark.parametrize("mode", [QuantMode.FLOAT, QuantMode.TERNARY])
    def test_divergence(self, rng: np.random.Generator, mode: QuantMode) -> None:
        """Test that a huge learning rate is reported as divergence."""
        model = Conv1dStack([2, 3, 1], 3, QuantConfig(), mode)
        cfg = TrainConfig(steps=20, learning_rate=1e30, log_every=0)
        with pytest.raises(TrainingDivergedError) as info:
            train(model, toy_dataset(rng), cfg)
        assert info.value.step < 20

    def test_dataset_lengths(self) -> None:
        """Test that inputs and targets must pair up."""
        with pytest.raises(ShapeMismatchError):
            Dataset(inputs=np.zeros((2, 1, 3)), targets=np.zeros((3, 1, 3)))


class TestPostTrainingQuantization:
    """Test PTQ and kernel-backed inference models."""

    def test_ternary_range(self) -> None:
        """Test that PTQ weights are ternary."""
        model = Conv1dStack([2, 4, 1], 3, QuantConfig(), QuantMode.FLOAT, seed=3)
        quantized = ptq_quantize(model, QuantConfig())
        for w in quantized.weights:
            assert isinstance(w, TernaryTensor)
            assert set(np.unique(w.values).tolist()) <= {-1, 0, 1}

    def test_four_bit_range(self) -> None:
        """Test that 4-bit PTQ stays within [-8, 7]."""
        model = Conv1dStack([2, 4, 1], 3, QuantConfig(), QuantMode.FLOAT, seed=3)
        for w in ptq_quantize(model, QuantConfig(bits=4)).weights:
            assert isinstance(w, IntQuantTensor)
            assert w.values.min() >= -8 and w.values.max() <= 7

    def test_inference_model_matches_fake_quant(self, rng: np.random.Generator) -> None:
        """Test that the kernel-backed copy predicts exactly like the trained model."""
        model = Conv1dStack([2, 4, 1], 3, QuantConfig(), seed=5)
        x = rng.standard_normal((3, 2, 9)).astype(np.float32)
        assert np.array_equal(inference_model(model).predict(x), model.predict(x))

    def test_records_from_ptq(self) -> None:
        """Test the archive kinds produced by a PTQ model."""
        model = Conv1dStack([2, 4, 1], 3, QuantConfig(), QuantMode.FLOAT)
        records = ptq_quantize(model, QuantConfig(bits=4)).to_layer_records(CodecConfig())
        assert {r.kind for r in records} == {LayerKind.INT4_PACKED}


class TestTeacher:
    """Test the teacher network and its datasets."""

    def test_teacher_weights(self) -> None:
        """Test sparse +-1/sqrt(fan_in) teacher weights."""
        cfg = ExperimentConfig(hidden_channels=32, in_channels=4)
        teacher = make_teacher(cfg, QuantConfig(), seed=0)
        zeros = total = 0
        for layer in teacher.layers:
            fan_in = layer.weights.shape[1] * layer.weights.shape[2]
            magnitudes = set(np.unique(np.abs(layer.weights)).tolist())
            assert magnitudes <= {0.0, float(np.float32(1 / np.sqrt(fan_in)))}
            zeros += int(np.sum(layer.weights == 0))
            total += layer.weights.size
        assert 0.3 < zeros / total < 0.5

    def test_dataset_shapes(self, small_experiment_config: ExperimentConfig) -> None:
        """Test train/eval set sizes and shapes."""
        train_set, eval_set = make_teacher_dataset(small_experiment_config, QuantConfig(), 0)
        assert train_set.inputs.shape == (32, 2, 8)
        assert train_set.targets.shape == (32, 1, 8)
        assert len(eval_set) == 16

    def test_dataset_deterministic(self, small_experiment_config: ExperimentConfig) -> None:
        """Test that a seed fixes the data and different seeds differ."""
        a, _ = make_teacher_dataset(small_experiment_config, QuantConfig(), 1)
        b, _ = make_teacher_dataset(small_experiment_config, QuantConfig(), 1)
        c, _ = make_teacher_dataset(small_experiment_config, QuantConfig(), 2)
        assert np.array_equal(a.targets, b.targets)
        assert not np.array_equal(a.inputs, c.inputs)


class TestExperimentReport:
    """Test the per-seed loss report."""

    def make_report(self) -> ExperimentReport:
        return ExperimentReport(
            methods=["float", "ptq", "qat"],
            results=[
                SeedResult(0, {"float": 0.5, "ptq": 4.0, "qat": 1.0}),
                SeedResult(1, {"float": 1.5, "ptq": 6.0, "qat": 3.0}),
            ],
        )

    def test_text_layout(self) -> None:
        """Test the tab-separated header and number format."""
        lines = self.make_report().to_text().splitlines()
        assert lines[0] == "seed\tfloat_loss\tptq_loss\tqat_loss"
        assert lines[1] == "0\t5.0000000000e-01\t4.0000000000e+00\t1.0000000000e+00"

    def test_round_trip(self, tmp_path: Path) -> None:
        """Test writing and reading a report file."""
        report = self.make_report()
        path = tmp_path / "report.tsv"
        report.write(path)
        assert ExperimentReport.read(path) == report

    def test_summary(self) -> None:
        """Test mean and population standard deviation."""
        stats = self.make_report().summary()
        assert stats["qat"] == (2.0, 1.0)
        assert stats["ptq"] == (5.0, 1.0)

    def test_pass_criterion(self) -> None:
        """Test that the QAT/PTQ gap must exceed the QAT spread."""
        report = self.make_report()
        assert report.passes()
        assert report.float_at_most_qat() == 2
        report.results[0].losses["ptq"] = 1.5
        report.results[1].losses["ptq"] = 3.5
        assert not report.passes()
        assert "FAIL" in report.format_summary()

    def test_bad_header(self) -> None:
        """Test that a foreign table is rejected."""
        with pytest.raises(ConfigError):
            ExperimentReport.from_text("run\tloss\n0\t1.0\n")

    def test_ragged_row(self) -> None:
        """Test that rows must have one cell per column."""
        with pytest.raises(ConfigError):
            ExperimentReport.from_text("seed\tfloat_loss\n0\t1.0\t2.0\n")


class TestRunExperiment:
    """Test the end-to-end comparison."""

    def test_small_run_deterministic(
        self,
        small_experiment_config: ExperimentConfig,
        small_train_config: TrainConfig,
    ) -> None:
        """Test that two runs produce the same report."""
        first = run_experiment(small_experiment_config, small_train_config)
        second = run_experiment(small_experiment_config, small_train_config)
        assert first.to_text() == second.to_text()
        assert [r.seed for r in first.results] == [0, 1]
        for r in first.results:
            assert all(np.isfinite(v) for v in r.losses.values())

    def test_extra_methods(self, small_train_config: TrainConfig) -> None:
        """Test optional baseline columns."""
        cfg = ExperimentConfig(
            seeds=1, train_samples=16, eval_samples=8, in_channels=2, hidden_channels=4,
            out_channels=1, num_layers=2, kernel_size=3, sequence_length=6,
            small_hidden_channels=2,
            methods=["float", "ptq", "qat", "ptq4", "qat4", "small_float", "qat_finetune"],
        )
        report = run_experiment(cfg, small_train_config)
        assert report.methods == cfg.methods
        assert set(report.results[0].losses) == set(cfg.methods)

    def test_save_dir(
        self,
        tmp_path: Path,
        small_experiment_config: ExperimentConfig,
        small_train_config: TrainConfig,
    ) -> None:
        """Test that trained models are archived per seed."""
        run_experiment(small_experiment_config, small_train_config, save_dir=tmp_path)
        records = load_quant_archive(tmp_path / "seed0_qat.btq")
        assert [r.name for r in records] == ["conv0.weight", "conv1.weight"]
        assert list(load_float_archive(tmp_path / "seed1_float.btw")) == [
            "conv0.weight",
            "conv1.weight",
        ]

    @pytest.mark.slow
    def test_qat_beats_ptq(self) -> None:
        """Test the default comparison: mean QAT loss clearly below PTQ."""
        report = run_experiment(ExperimentConfig(), TrainConfig(log_every=0))
        assert report.passes(), report.format_summary()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
