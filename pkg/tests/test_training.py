"""Tests for AdamW, the schedule, the training loop and evaluation."""

import json
import math
import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from strip_mlp.autograd import Tensor, ops
from strip_mlp.config import DataConfig, OptimConfig, RunConfig
from strip_mlp.data import Dataset, synthetic_dataset, write_cifar10_bin
from strip_mlp.data.cifar import TEST_FILES, TRAIN_FILES
from strip_mlp.errors import ConfigError, NumericError, TrainingError, UsageError
from strip_mlp.layers import ParamStore
from strip_mlp.models import VARIANTS, build_model, load_checkpoint, variant_config
from strip_mlp.training import (
    OptimState,
    Schedule,
    adamw_step,
    clip_gradients,
    evaluate,
    load_datasets,
    lr_at,
    top1,
    train,
    train_step,
)

SLOW = os.environ.get("STRIP_MLP_SLOW_TESTS") == "1"
CIFAR_DIR = os.environ.get("STRIP_MLP_CIFAR_DIR")


def _store(**tensors):
    store = ParamStore()
    for name, (value, role) in tensors.items():
        store.add(name, np.array(value, dtype=float), role)
    return store


class TestAdamW(unittest.TestCase):
    """Tests for the decoupled-decay AdamW update."""

    def test_zero_gradient_only_decays(self):
        """Test theta <- theta * (1 - lr * wd) when the gradient is zero."""
        store = _store(w=([1.0, -2.0], "weight"))
        state = OptimState(lr=0.1, weight_decay=0.5)

        adamw_step(store, {"w": np.zeros(2)}, state)

        np.testing.assert_allclose(store["w"].data, [0.95, -1.9])

    def test_first_step_moves_by_lr(self):
        """Test that the bias-corrected first step is lr * g / (|g| + eps)."""
        store = _store(b=([0.0, 0.0], "bias"))
        state = OptimState(lr=0.01, weight_decay=0.05)

        adamw_step(store, {"b": np.array([0.5, -2.0])}, state)

        np.testing.assert_allclose(store["b"].data, [-0.01, 0.01], rtol=1e-6)
        self.assertEqual(state.step, 1)

    def test_decay_exempt_roles_are_not_decayed(self):
        """Test that biases, scales and shifts are never decayed."""
        store = _store(
            w=([1.0], "weight"), b=([1.0], "bias"), g=([1.0], "scale"), s=([1.0], "shift"),
            r=([1.0], "buffer"),
        )
        state = OptimState(lr=0.1, weight_decay=1.0)
        grads = {name: np.zeros(1) for name in ("w", "b", "g", "s")}

        adamw_step(store, grads, state)

        np.testing.assert_allclose(store["w"].data, [0.9])
        for name in ("b", "g", "s", "r"):
            self.assertEqual(store[name].data.tolist(), [1.0], name)
        self.assertNotIn("r", state.m)

    def test_moments_follow_definition(self):
        """Test two steps against a hand-computed update."""
        store = _store(w=([1.0], "weight"))
        state = OptimState(lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0)

        adamw_step(store, {"w": np.array([1.0])}, state)
        adamw_step(store, {"w": np.array([3.0])}, state)

        m = 0.9 * 0.1 + 0.1 * 3.0
        v = 0.999 * 0.001 + 0.001 * 9.0
        update = (m / (1 - 0.9 ** 2)) / (math.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
        self.assertAlmostEqual(store["w"].data[0], 1.0 - 0.1 - 0.1 * update, places=6)

    def test_values_are_replaced_not_mutated(self):
        """Test that the optimizer leaves the old parameter array intact."""
        store = _store(w=([1.0], "weight"))
        before = store["w"].data

        adamw_step(store, {"w": np.array([1.0])}, OptimState(lr=0.1))

        self.assertEqual(before.tolist(), [1.0])

    def test_invalid_hyper_parameters(self):
        """Test that out-of-range betas are rejected."""
        with self.assertRaises(ConfigError):
            OptimState(beta1=1.0)


class TestSchedule(unittest.TestCase):
    """Tests for warmup followed by cosine decay."""

    def setUp(self):
        """Set up test fixtures."""
        self.schedule = Schedule(base_lr=1e-3, warmup_epochs=2, total_epochs=10, min_lr=1e-5,
                                 warmup_start_lr=1e-6)

    def test_endpoints(self):
        """Test warmup start, the warmup/cosine boundary and the final step."""
        self.assertAlmostEqual(lr_at(self.schedule, 0, 5), 1e-6)
        self.assertAlmostEqual(lr_at(self.schedule, 10, 5), 1e-3)
        self.assertAlmostEqual(lr_at(self.schedule, 49, 5), 1e-5)

    def test_single_step_cosine_ends_at_min_lr(self):
        """Test that the final step is min_lr even when it is also the first post-warmup step."""
        schedule = Schedule(base_lr=1e-3, warmup_epochs=1, total_epochs=2, min_lr=1e-5)

        self.assertAlmostEqual(lr_at(schedule, 0, 1), schedule.warmup_start_lr)
        self.assertEqual(lr_at(schedule, 1, 1), 1e-5)
        self.assertEqual(lr_at(Schedule(warmup_epochs=0, total_epochs=1, min_lr=1e-5), 0, 1), 1e-5)

    def test_warmup_is_linear(self):
        """Test the midpoint of warmup."""
        self.assertAlmostEqual(lr_at(self.schedule, 5, 5), 1e-6 + (1e-3 - 1e-6) / 2)

    @settings(max_examples=50, deadline=None)
    @given(step=st.integers(min_value=10, max_value=48))
    def test_cosine_is_non_increasing(self, step):
        """Test monotone decay after warmup."""
        self.assertGreaterEqual(lr_at(self.schedule, step, 5), lr_at(self.schedule, step + 1, 5))

    def test_invalid_arguments(self):
        """Test bad schedules and steps."""
        with self.assertRaises(ConfigError):
            Schedule(warmup_epochs=5, total_epochs=5)
        with self.assertRaises(UsageError):
            lr_at(self.schedule, -1, 5)
        with self.assertRaises(UsageError):
            lr_at(self.schedule, 0, 0)


class _FixedModel:
    """Returns preset logits per call, ignoring its input."""

    def __init__(self, logits):
        self.logits = np.asarray(logits, dtype=float)
        self.training = True
        self.modes = []

    def __call__(self, x):
        n = x.shape[0]
        out, self.logits = self.logits[:n], self.logits[n:]
        return Tensor(out)

    def eval(self):
        self.modes.append("eval")
        self.training = False

    def train(self, mode=True):
        self.modes.append("train")
        self.training = mode


class TestEvaluate(unittest.TestCase):
    """Tests for top-1 evaluation."""

    def setUp(self):
        """Set up test fixtures."""
        self.dataset = Dataset(np.zeros((4, 3, 2, 2)), np.array([0, 1, 2, 1]), num_classes=3)

    def test_perfect_model(self):
        """Test that one-hot logits on the labels score 1.0."""
        model = _FixedModel(np.eye(3)[[0, 1, 2, 1]])

        accuracy = evaluate(model, self.dataset, batch_size=3)

        self.assertEqual(accuracy, 1.0)
        self.assertEqual(model.modes, ["eval", "train"])

    def test_ties_go_to_lowest_index(self):
        """Test that constant logits predict class 0 for every sample."""
        model = _FixedModel(np.zeros((4, 3)))

        self.assertEqual(evaluate(model, self.dataset), 0.25)

    def test_empty_set(self):
        """Test that accuracy of nothing is an error."""
        with self.assertRaises(ConfigError):
            top1(np.zeros((0, 3)), np.zeros(0, dtype=int))


class TestTrainingLoop(unittest.TestCase):
    """Tests for train_step and train."""

    def setUp(self):
        """Set up test fixtures."""
        self.tmp = tempfile.TemporaryDirectory()
        self.run_dir = Path(self.tmp.name) / "run"
        self.config = RunConfig(
            model=VARIANTS["tiny"],
            schedule=Schedule(base_lr=1e-3, warmup_epochs=1, total_epochs=2),
            data=DataConfig(synthetic_size=10, batch_size=4),
            seed=0,
            max_steps=4,
        )

    def tearDown(self):
        """Clean up test fixtures."""
        self.tmp.cleanup()

    def test_small_step_decreases_loss(self):
        """Test that one step at a small learning rate lowers the batch loss."""
        model, store = build_model(VARIANTS["tiny"], seed=0)
        data = synthetic_dataset(4, 4, seed=0)
        images, labels = data.images, data.labels
        optim = OptimState(lr=1e-5, weight_decay=0.0)

        before, _ = train_step(model, store, images, labels, optim, 1e-5)
        model.train()
        after = ops.cross_entropy(model(Tensor(images)), labels, 0.0).item()

        self.assertLess(after, before)

    def test_train_writes_metrics_and_checkpoints(self):
        """Test the run directory contents and the logged schedule."""
        model, store = build_model(self.config.model, seed=0)
        train_set, eval_set = load_datasets(self.config)

        result = train(model, store, train_set, self.config, eval_set=eval_set, run_dir=self.run_dir)

        self.assertEqual(result.steps, 4)
        self.assertEqual(result.epochs, 2)
        self.assertEqual(result.lrs, [lr_at(self.config.schedule, s, 3) for s in range(4)])
        self.assertTrue(all(np.isfinite(result.losses)))
        with open(self.run_dir / "metrics.jsonl", encoding="utf-8") as f:
            records = [json.loads(line) for line in f]
        self.assertEqual([r["kind"] for r in records].count("step"), 4)
        self.assertIn("top1", records[-1])
        self.assertTrue((self.run_dir / "checkpoints" / "last.smlp").exists())
        self.assertTrue((self.run_dir / "checkpoints" / "epoch0001.smlp").exists())

        _, restored = build_model(self.config.model, seed=1)
        load_checkpoint(self.run_dir / "checkpoints" / "last.smlp", restored)
        for name in store:
            np.testing.assert_array_equal(restored[name].data, store[name].data)

    def test_training_is_deterministic(self):
        """Test that two runs with one seed give bitwise-identical parameters."""
        stores = []
        for _ in range(2):
            model, store = build_model(self.config.model, seed=0)
            train_set, _ = load_datasets(self.config)
            train(model, store, train_set, self.config.replace(data=DataConfig(
                synthetic_size=10, batch_size=4, augment="basic"
            )))
            stores.append(store)

        for name in stores[0]:
            np.testing.assert_array_equal(stores[0][name].data, stores[1][name].data)

    def test_non_finite_loss_raises_training_error(self):
        """Test that a NumericError mid-run becomes a TrainingError with step and lr."""
        model, store = build_model(self.config.model, seed=0)
        train_set, _ = load_datasets(self.config)
        calls = {"n": 0}
        real_forward = model.forward

        def forward(img):
            calls["n"] += 1
            if calls["n"] == 3:
                raise NumericError("non-finite values produced by 'conv2d'")
            return real_forward(img)

        with mock.patch.object(model, "forward", side_effect=forward):
            with self.assertRaises(TrainingError) as cm:
                train(model, store, train_set, self.config)

        self.assertEqual(cm.exception.step, 2)
        self.assertAlmostEqual(cm.exception.lr, lr_at(self.config.schedule, 2, 3))

    def test_evaluation_is_order_independent(self):
        """Test that split and permuted evaluation agree with the whole set."""
        model, _ = build_model(self.config.model, seed=0)
        dataset = synthetic_dataset(12, 10, seed=2)
        order = np.random.default_rng(0).permutation(12)

        whole = evaluate(model, dataset, batch_size=5)
        shuffled = evaluate(model, dataset.subset(order), batch_size=7)
        first, second = evaluate(model, dataset.subset(slice(0, 4))), evaluate(model, dataset.subset(slice(4, 12)))

        self.assertAlmostEqual(shuffled, whole)
        self.assertAlmostEqual((4 * first + 8 * second) / 12, whole)

    def test_gradient_clipping(self):
        """Test that clipping rescales to the requested global norm."""
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}

        norm = clip_gradients(grads, 1.0)

        self.assertEqual(norm, 5.0)
        np.testing.assert_allclose([grads["a"][0], grads["b"][0]], [0.6, 0.8])

    def test_cifar_source_reads_split_files(self):
        """Test loading both splits from a directory of record files, with subsets."""
        folder = Path(self.tmp.name) / "cifar-10-batches-bin"
        folder.mkdir()
        dataset = synthetic_dataset(10, 10, seed=5)
        for name in TRAIN_FILES + TEST_FILES:
            write_cifar10_bin(dataset, folder / name)
        config = self.config.replace(
            data=DataConfig(source="cifar10", root=self.tmp.name, train_subset=30, test_subset=4)
        )

        train_set, test_set = load_datasets(config)

        self.assertEqual(len(train_set), 30)
        self.assertEqual(len(test_set), 4)
        self.assertEqual(test_set.labels.tolist(), [0, 1, 2, 3])

    def test_head_too_small_for_dataset(self):
        """Test that a head with fewer classes than the data is rejected."""
        folder = Path(self.tmp.name) / "cifar-10-batches-bin"
        folder.mkdir()
        for name in TRAIN_FILES + TEST_FILES:
            write_cifar10_bin(synthetic_dataset(10, 10, seed=5), folder / name)
        config = self.config.replace(
            model=variant_config("tiny", num_classes=5),
            data=DataConfig(source="cifar10", root=self.tmp.name),
        )

        with self.assertRaises(ConfigError):
            load_datasets(config)

    @unittest.skipUnless(SLOW, "set STRIP_MLP_SLOW_TESTS=1")
    def test_memorizes_synthetic_set(self):
        """Test that the tiny model reaches 100% train accuracy on 64 synthetic images."""
        config = RunConfig(
            model=VARIANTS["tiny"],
            schedule=Schedule(base_lr=1e-3, warmup_epochs=2, total_epochs=60),
            optim=OptimConfig(weight_decay=0.0, label_smoothing=0.0),
            data=DataConfig(synthetic_size=64, batch_size=16),
        )
        model, store = build_model(config.model, seed=0)
        train_set, eval_set = load_datasets(config)

        train(model, store, train_set, config)

        self.assertEqual(evaluate(model, eval_set), 1.0)

    @unittest.skipUnless(SLOW and CIFAR_DIR, "set STRIP_MLP_SLOW_TESTS=1 and STRIP_MLP_CIFAR_DIR")
    def test_cifar_smoke_run(self):
        """Test a short CIFAR-10 run beats chance."""
        config = RunConfig(
            model=VARIANTS["tiny"],
            schedule=Schedule(base_lr=1e-3, warmup_epochs=1, total_epochs=3),
            data=DataConfig(source="cifar10", root=CIFAR_DIR, train_subset=5000, test_subset=1000,
                            batch_size=64, augment="basic"),
        )
        model, store = build_model(config.model, seed=0)
        train_set, test_set = load_datasets(config)

        train(model, store, train_set, config)

        self.assertGreater(evaluate(model, test_set), 0.30)


if __name__ == "__main__":
    unittest.main()
