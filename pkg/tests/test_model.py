"""Tests for the model zoo."""

import os
import re
import unittest

import numpy as np

from strip_mlp.analysis import count_flops, count_params
from strip_mlp.autograd import Tensor, backward, no_grad, ops
from strip_mlp.errors import ConfigError, NumericError
from strip_mlp.models import VARIANTS, ModelConfig, build_model, model_forward, variant_config
from strip_mlp.tensor import parallel

SLOW = os.environ.get("STRIP_MLP_SLOW_TESTS") == "1"

# (parameters, FLOPs) of the four presets at 224x224 with 1000 classes.
BUDGETS = {
    "tstar": (18e6, 2.5e9),
    "t": (25e6, 3.7e9),
    "s": (44e6, 6.8e9),
    "b": (57e6, 9.2e9),
}


class TestVariants(unittest.TestCase):
    """Tests for the preset configurations."""

    def test_budgets_within_ten_percent(self):
        """Test parameter and FLOP totals of every preset against its budget."""
        for name, (params, flops) in BUDGETS.items():
            with self.subTest(variant=name):
                model, store = build_model(VARIANTS[name], seed=None)

                total = store.total()
                macs = count_flops(model, (3, 224, 224))

                self.assertLess(abs(total - params) / params, 0.10, f"{name}: {total:,} params")
                self.assertLess(abs(macs - flops) / flops, 0.10, f"{name}: {macs:,} FLOPs")

    def test_presets_grow_monotonically(self):
        """Test that parameters and FLOPs strictly increase from tstar through b."""
        totals, flops = [], []
        for name in ("tstar", "t", "s", "b"):
            model, store = build_model(VARIANTS[name], seed=None)
            totals.append(store.total())
            flops.append(count_flops(model, (3, 224, 224)))

        self.assertEqual(totals, sorted(set(totals)))
        self.assertEqual(flops, sorted(set(flops)))

    def test_analytic_counts_match_enumeration(self):
        """Test that layer geometry and store enumeration agree for every preset."""
        for name in VARIANTS:
            with self.subTest(variant=name):
                model, store = build_model(VARIANTS[name], seed=None)

                self.assertEqual(model.param_counts(), count_params(model))
                self.assertEqual(sum(model.param_counts()), store.total())

    def test_variant_overrides(self):
        """Test that variant_config overrides preset fields."""
        cfg = variant_config("b", num_classes=100, patch_policy="c2")

        self.assertEqual(cfg.channels, 112)
        self.assertEqual(cfg.depths, (2, 2, 18, 2))
        self.assertEqual(cfg.num_classes, 100)
        self.assertEqual(cfg.patch_policy, "c2")

    def test_unknown_variant(self):
        """Test that an unknown preset name is a ConfigError."""
        with self.assertRaises(ConfigError):
            variant_config("xl")

    def test_resolution_must_tile_stages(self):
        """Test that the resolution must survive the patch size and three merges."""
        with self.assertRaises(ConfigError):
            ModelConfig(resolution=100)
        with self.assertRaises(ConfigError):
            ModelConfig(depths=(2, 2, 0, 2))

    def test_patch_policy_must_divide_every_stage(self):
        """Test that a patch policy that does not divide a branch width is rejected at build time."""
        cfg = ModelConfig(channels=20, depths=(1, 1, 1, 1), resolution=32, patch_size=2, patch_policy="c8")

        with self.assertRaises(ConfigError):
            build_model(cfg, seed=None)


class TestBuild(unittest.TestCase):
    """Tests for building and running a model."""

    def setUp(self):
        """Set up test fixtures."""
        self.cfg = VARIANTS["tiny"]
        self.rng = np.random.default_rng(0)

    def test_forward_shape(self):
        """Test that logits are (N, num_classes)."""
        model, _ = build_model(self.cfg, seed=0)
        images = self.rng.normal(size=(2, 3, 32, 32))

        with no_grad():
            logits = model_forward(model, Tensor(images))

        self.assertEqual(logits.shape, (2, 10))
        self.assertTrue(np.all(np.isfinite(logits.data)))

    def test_gradients_reach_every_model_parameter(self):
        """Test that a cross-entropy loss on two images gives every trainable tensor a gradient."""
        model, store = build_model(self.cfg, seed=0)
        images = self.rng.normal(size=(2, 3, 32, 32))

        backward(ops.cross_entropy(model_forward(model, Tensor(images)), np.array([1, 7])))

        missing = [e.name for e in store.trainable() if e.tensor.grad is None]
        self.assertEqual(missing, [])

    def test_zeroed_residual_branches_leave_skeleton_path(self):
        """Test that with every block's fc2 zeroed the logits come from embed, merges, skips and head."""
        model, store = build_model(self.cfg, seed=0)
        pattern = re.compile(r"stage\d\.\d+\.(strip|channel)\.fc2\.(weight|bias)")
        closing = [name for name in store if pattern.fullmatch(name)]
        for name in closing:
            store[name].data = np.zeros(store[name].shape)
        images = self.rng.normal(size=(2, 3, 32, 32))

        with no_grad():
            logits = model_forward(model, Tensor(images)).data
            s1 = model.embed(Tensor(images))
            s2 = model.merges[0](s1)
            x = model.merges[1](s2) + model.skip1(s1)
            x = (model.merges[2](x) + model.skip2(s2)).data
        pooled = x.mean(axis=(2, 3))
        expected = pooled @ store["head.weight"].data.T + store["head.bias"].data

        self.assertEqual(len(closing), 4 * sum(self.cfg.depths))
        np.testing.assert_allclose(logits, expected, rtol=1e-10, atol=1e-12)

    def test_wrong_resolution_raises_config_error(self):
        """Test that the model refuses images of another size."""
        model, _ = build_model(self.cfg, seed=0)

        with self.assertRaises(ConfigError):
            model_forward(model, Tensor(np.zeros((1, 3, 16, 16))))

    def test_non_finite_activation_names_layer(self):
        """Test that NaN input raises NumericError naming the failing layer."""
        model, _ = build_model(self.cfg, seed=0)
        images = np.full((1, 3, 32, 32), np.nan)

        with self.assertRaises(NumericError) as cm:
            with no_grad():
                model_forward(model, Tensor(images))

        self.assertIn("embed", str(cm.exception))

    def test_same_seed_same_parameters(self):
        """Test that two builds with one seed enumerate identical tensors."""
        _, first = build_model(self.cfg, seed=7)
        _, second = build_model(self.cfg, seed=7)
        _, other = build_model(self.cfg, seed=8)

        self.assertEqual(list(first), list(second))
        for name in first:
            np.testing.assert_array_equal(first[name].data, second[name].data)
        self.assertFalse(np.array_equal(first["head.weight"].data, other["head.weight"].data))

    def test_initialization(self):
        """Test truncated-normal weights, zero biases, unit BN scales."""
        _, store = build_model(self.cfg, seed=0)

        weights = np.concatenate([e.tensor.data.ravel() for e in store.entries() if e.role == "weight"])
        self.assertLessEqual(np.abs(weights).max(), 0.04)
        self.assertAlmostEqual(float(weights.std()), 0.02 * 0.88, delta=0.002)
        for entry in store.entries():
            if entry.role == "bias":
                self.assertFalse(entry.tensor.data.any(), entry.name)
            if entry.name.endswith("norm.gamma"):
                np.testing.assert_array_equal(entry.tensor.data, 1.0)

    def test_decay_applies_to_weights_only(self):
        """Test that exactly the role=weight tensors are decay-eligible."""
        _, store = build_model(self.cfg, seed=0)

        decayed = {e.name for e in store.entries() if e.decay}
        expected = {e.name for e in store.entries() if e.role == "weight"}

        self.assertEqual(decayed, expected)
        self.assertTrue(all(name.endswith(".weight") for name in decayed))
        self.assertFalse(any(".grn." in name or ".norm." in name for name in decayed))

    def test_skip_connections_exist(self):
        """Test the two skip convolutions and their geometry."""
        model, store = build_model(self.cfg, seed=0)
        c = self.cfg.channels

        self.assertEqual(store["skip1.weight"].shape, (4 * c, c, 4, 4))
        self.assertEqual(store["skip2.weight"].shape, (8 * c, 2 * c, 4, 4))

    def test_stage_layout(self):
        """Test per-stage channel and spatial sizes of the tiny preset."""
        model, _ = build_model(self.cfg, seed=None)

        sizes = [(s.channels, s.size) for s in model.stages]

        self.assertEqual(sizes, [(32, 16), (64, 8), (128, 4), (256, 2)])
        self.assertEqual(len(model.stages[2].blocks), 4)

    @unittest.skipUnless(SLOW, "set STRIP_MLP_SLOW_TESTS=1")
    def test_threaded_forward_matches_serial_for_presets(self):
        """Test that thread count does not change the logits of any preset."""
        try:
            for name in ("tstar", "t", "s", "b"):
                with self.subTest(variant=name):
                    model, _ = build_model(VARIANTS[name], seed=0)
                    images = self.rng.normal(size=(2, 3, 224, 224))
                    parallel.set_worker_count(0)
                    with no_grad():
                        serial = model_forward(model, Tensor(images)).data
                    parallel.set_worker_count(8)
                    with no_grad():
                        threaded = model_forward(model, Tensor(images)).data
                    np.testing.assert_allclose(threaded, serial, rtol=1e-12, atol=1e-12)
        finally:
            parallel.set_worker_count(None)


if __name__ == "__main__":
    unittest.main()
