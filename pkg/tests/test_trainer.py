"""Tests for SGD, the training loop and the stage ablation."""

import numpy as np
import pytest

from arcconv.core.errors import ConfigurationError, InputError, TrainingDivergenceError
from arcconv.core.network import build_smallnet
from arcconv.core.tensor import Parameter
from arcconv.core.trainer import SGD, ablation, evaluate, evaluate_loss, prepare_data, train
from arcconv.models.configs import Stage, TrainConfig, TrainMode
from arcconv.services.datagen import generate


class TestSGD:
    """Test cases for the momentum optimizer."""

    def test_momentum_update(self):
        """Test v = m*v + g; p -= lr*v over two steps."""
        p = Parameter(np.array([1.0]))
        optimizer = SGD([([p], 0.1)], momentum=0.5)
        p.grad[...] = 2.0
        optimizer.step()
        assert p.data[0] == pytest.approx(0.8)
        optimizer.step()
        assert p.data[0] == pytest.approx(0.5)

    def test_zero_grad(self):
        """Test that zero_grad clears every group."""
        p = Parameter(np.ones(2))
        p.grad[...] = 3.0
        SGD([([p], 0.1)]).zero_grad()
        np.testing.assert_array_equal(p.grad, np.zeros(2))

    def test_invalid_momentum(self):
        """Test that momentum must lie in [0, 1)."""
        with pytest.raises(ConfigurationError):
            SGD([], momentum=1.0)

    def test_backbone_rate_is_scaled(self, tiny_train_config):
        """Test that the head trains at lr and the backbone at lr * scale."""
        model = build_smallnet(config=tiny_train_config)
        optimizer = SGD.for_model(model, tiny_train_config)
        (backbone, backbone_lr), (head, head_lr) = optimizer.groups
        assert head_lr == tiny_train_config.lr
        assert backbone_lr == pytest.approx(tiny_train_config.lr * tiny_train_config.backbone_lr_scale)
        assert len(head) == 2
        assert len(backbone) + len(head) == len(model.parameters())


class TestTraining:
    """Test cases for train, evaluate and prepare_data."""

    def test_prepare_data_sizes(self, tiny_train_config):
        """Test that the split honours the requested counts."""
        train_set, test_set = prepare_data(tiny_train_config)
        assert len(train_set) == tiny_train_config.train_count
        assert len(test_set) == tiny_train_config.test_count

    def test_training_is_deterministic(self, tiny_train_config):
        """Test that equal configs give identical metric histories."""
        train_set, test_set = prepare_data(tiny_train_config)
        first = train(build_smallnet(config=tiny_train_config), train_set, test_set, tiny_train_config)
        second = train(build_smallnet(config=tiny_train_config), train_set, test_set, tiny_train_config)
        assert [m.model_dump() for m in first] == [m.model_dump() for m in second]
        assert len(first) == tiny_train_config.epochs

    def test_static_model_fits_training_set(self, tiny_train_config):
        """Test that the training loss falls on a small training set."""
        config = tiny_train_config.model_copy(update={"mode": TrainMode.STATIC, "epochs": 40})
        train_set, _ = prepare_data(config)
        history = train(build_smallnet(config=config), train_set, [], config)
        assert history[-1].train_loss < history[0].train_loss
        assert np.isnan(history[-1].test_acc)

    def test_single_batch_overfit(self):
        """Test that an ARC model memorises one 32-sample batch within 200 steps."""
        config = TrainConfig(mode=TrainMode.ARC, n=2, stages="C", epochs=200, batch_size=32,
                             train_count=32, test_count=1, image_size=16, seed=0)
        # four samples per orientation bin, centred in the bin
        orientations = [(i % config.bins + 0.5) * 180.0 / config.bins for i in range(32)]
        batch = generate(config.dataset_config(), 32, orientations)
        model = build_smallnet(config=config)
        history = train(model, batch, [], config)
        assert len(history) == 200
        assert evaluate(model, batch) == 1.0

    def test_zero_learning_rate_keeps_parameters(self, tiny_train_config):
        """Test that lr = 0 leaves every parameter bitwise unchanged."""
        config = tiny_train_config.model_copy(update={"lr": 0.0})
        model = build_smallnet(config=config)
        before = model.state_dict()
        train_set, test_set = prepare_data(config)
        train(model, train_set, test_set, config)
        for name, value in model.state_dict().items():
            np.testing.assert_array_equal(value, before[name])

    def test_on_epoch_callback(self, tiny_train_config):
        """Test that the callback sees every epoch."""
        config = tiny_train_config.model_copy(update={"epochs": 2})
        train_set, test_set = prepare_data(config)
        seen = []
        train(build_smallnet(config=config), train_set, test_set, config, on_epoch=seen.append)
        assert [m.epoch for m in seen] == [1, 2]

    def test_divergence_is_reported(self, tiny_train_config):
        """Test that a non-finite loss raises with the history so far."""
        model = build_smallnet(config=tiny_train_config)
        model.head.weight.data[...] = np.nan
        train_set, test_set = prepare_data(tiny_train_config)
        with pytest.raises(TrainingDivergenceError) as exc:
            train(model, train_set, test_set, tiny_train_config)
        assert exc.value.history == []
        assert exc.value.last_metrics is None

    def test_empty_sets(self, tiny_train_config):
        """Test that empty datasets are rejected."""
        model = build_smallnet(config=tiny_train_config)
        with pytest.raises(InputError):
            evaluate(model, [])
        with pytest.raises(InputError):
            train(model, [], [], tiny_train_config)

    def test_evaluate_ranges(self, tiny_train_config):
        """Test that loss is positive and accuracy is a fraction."""
        model = build_smallnet(config=tiny_train_config)
        _, test_set = prepare_data(tiny_train_config)
        loss, accuracy = evaluate_loss(model, test_set)
        assert loss > 0.0
        assert 0.0 <= accuracy <= 1.0


class TestAblation:
    """Test cases for the stage-replacement sweep."""

    def test_rows(self, tiny_train_config):
        """Test one row for the static baseline plus one per subset."""
        rows = ablation(tiny_train_config, stage_subsets=[(Stage.C,)], seeds=(0,))
        assert [row.stages for row in rows] == ["static", "C"]
        for row in rows:
            assert row.seeds == [0]
            assert len(row.accuracies) == 1
            assert 0.0 <= row.mean_accuracy <= 1.0

    @pytest.mark.slow
    def test_arc_matches_or_beats_static(self):
        """Test mean test accuracy over three seeds on the full toy task."""
        base = TrainConfig(mode=TrainMode.ARC, n=4, stages="A,B,C", train_count=1600, test_count=400, bins=8)
        rows = ablation(base, stage_subsets=[(Stage.A, Stage.B, Stage.C)], seeds=(0, 1, 2))
        means = {row.stages: row.mean_accuracy for row in rows}
        assert means["static"] >= 0.70
        assert means["A,B,C"] >= 0.70
        assert means["A,B,C"] >= means["static"]
