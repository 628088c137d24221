"""Tests for the tensor-core kernels."""

import os
import unittest
from unittest import mock

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from strip_mlp.errors import ConfigError, DimensionError, NumericError
from strip_mlp.tensor import kernels, parallel
from strip_mlp.tensor.kernels import ConvSpec

from .oracles import conv2d_loops


class TestConv2d(unittest.TestCase):
    """Tests for the im2col convolution."""

    CASES = [
        dict(cin=3, cout=4, kernel=(3, 3), stride=(1, 1), padding=(1, 1), groups=1, size=(5, 5)),
        dict(cin=4, cout=6, kernel=(1, 3), stride=(1, 2), padding=(0, 1), groups=2, size=(3, 7)),
        dict(cin=4, cout=4, kernel=(3, 7), stride=(1, 1), padding=(1, 3), groups=4, size=(6, 6)),
        dict(cin=2, cout=8, kernel=(4, 4), stride=(4, 4), padding=(0, 0), groups=1, size=(8, 8)),
        dict(cin=6, cout=3, kernel=(1, 1), stride=(1, 1), padding=(0, 0), groups=1, size=(4, 5)),
    ]

    def setUp(self):
        """Set up test fixtures."""
        self.rng = np.random.default_rng(0)

    def test_matches_loop_oracle(self):
        """Test conv2d against explicit loops for several geometries."""
        for case in self.CASES:
            with self.subTest(case=case):
                spec = ConvSpec(
                    case["cin"], case["cout"], kernel=case["kernel"], stride=case["stride"],
                    padding=case["padding"], groups=case["groups"],
                )
                x = self.rng.normal(size=(2, case["cin"], *case["size"]))
                w = self.rng.normal(size=spec.weight_shape)
                b = self.rng.normal(size=case["cout"])

                y = kernels.conv2d(x, spec, w, b)
                expected = conv2d_loops(x, w, b, case["stride"], case["padding"], case["groups"])

                self.assertEqual(y.shape, expected.shape)
                np.testing.assert_allclose(y, expected, rtol=1e-12, atol=1e-12)

    def test_backward_matches_finite_differences(self):
        """Test conv2d_backward input and weight gradients numerically."""
        spec = ConvSpec(4, 6, kernel=(1, 3), stride=(1, 2), padding=(0, 1), groups=2)
        x = self.rng.normal(size=(2, 4, 3, 7))
        w = self.rng.normal(size=spec.weight_shape)
        projection = self.rng.normal(size=kernels.conv2d(x, spec, w).shape)

        grad_x, grad_w, grad_b = kernels.conv2d_backward(projection, x, w, spec)

        eps = 1e-6
        for index in [(0, 1, 2, 3), (1, 3, 0, 6)]:
            xp, xm = x.copy(), x.copy()
            xp[index] += eps
            xm[index] -= eps
            fd = (np.sum(kernels.conv2d(xp, spec, w) * projection)
                  - np.sum(kernels.conv2d(xm, spec, w) * projection)) / (2 * eps)
            self.assertAlmostEqual(grad_x[index], fd, places=6)
        for index in [(0, 0, 0, 1), (5, 1, 0, 2)]:
            wp, wm = w.copy(), w.copy()
            wp[index] += eps
            wm[index] -= eps
            fd = (np.sum(kernels.conv2d(x, spec, wp) * projection)
                  - np.sum(kernels.conv2d(x, spec, wm) * projection)) / (2 * eps)
            self.assertAlmostEqual(grad_w[index], fd, places=6)
        np.testing.assert_allclose(grad_b, projection.sum(axis=(0, 2, 3)))

    def test_non_integral_output_raises_config_error(self):
        """Test that a stride that does not tile the input is rejected."""
        spec = ConvSpec(2, 2, kernel=(1, 3), stride=(1, 2), padding=(0, 1))

        with self.assertRaises(ConfigError):
            spec.output_size(3, 6)
        with self.assertRaises(ConfigError):
            kernels.conv2d(np.zeros((1, 2, 3, 6)), spec, np.zeros(spec.weight_shape))

    def test_channel_mismatch_raises_dimension_error(self):
        """Test that an input with the wrong channel count is rejected."""
        spec = ConvSpec(3, 4)

        with self.assertRaises(DimensionError):
            kernels.conv2d(np.zeros((1, 5, 4, 4)), spec, np.zeros(spec.weight_shape))

    def test_invalid_groups_raise_config_error(self):
        """Test that channels must divide evenly into groups."""
        with self.assertRaises(ConfigError):
            ConvSpec(6, 4, groups=4)

    def test_macs_counts_every_multiply(self):
        """Test ConvSpec.macs against Cout * H'W' * Cin/g * kh * kw."""
        spec = ConvSpec(4, 6, kernel=(3, 7), stride=(1, 1), padding=(1, 3), groups=2)

        # Assertions
        self.assertEqual(spec.output_size(6, 6), (6, 6))
        self.assertEqual(spec.macs(6, 6), 6 * 36 * 2 * 21)
        self.assertEqual(spec.param_count(), 6 * 2 * 21 + 6)

    def test_non_finite_result_raises_numeric_error(self):
        """Test that NaN inputs surface as NumericError."""
        spec = ConvSpec(1, 1)
        x = np.full((1, 1, 2, 2), np.nan)

        with self.assertRaises(NumericError):
            kernels.conv2d(x, spec, np.ones(spec.weight_shape))

    @settings(max_examples=25, deadline=None)
    @given(
        scale=st.floats(min_value=-3.0, max_value=3.0, allow_nan=False),
        seed=st.integers(min_value=0, max_value=2 ** 16),
    )
    def test_conv_is_linear_in_its_input(self, scale, seed):
        """Test conv(a*x1 + x2) == a*conv(x1) + conv(x2) without bias."""
        rng = np.random.default_rng(seed)
        spec = ConvSpec(2, 3, kernel=3, padding=1)
        w = rng.normal(size=spec.weight_shape)
        x1 = rng.normal(size=(1, 2, 4, 4))
        x2 = rng.normal(size=(1, 2, 4, 4))

        left = kernels.conv2d(scale * x1 + x2, spec, w)
        right = scale * kernels.conv2d(x1, spec, w) + kernels.conv2d(x2, spec, w)

        np.testing.assert_allclose(left, right, rtol=1e-10, atol=1e-10)


class TestDenseKernels(unittest.TestCase):
    """Tests for linear, normalization, activation and layout kernels."""

    def setUp(self):
        """Set up test fixtures."""
        self.rng = np.random.default_rng(1)

    def test_linear(self):
        """Test linear against an explicit sum."""
        x = self.rng.normal(size=(3, 4))
        w = self.rng.normal(size=(2, 4))
        b = self.rng.normal(size=2)

        y = kernels.linear(x, w, b)

        expected = np.array([[sum(x[r, i] * w[o, i] for i in range(4)) + b[o] for o in range(2)]
                             for r in range(3)])
        np.testing.assert_allclose(y, expected)

    def test_linear_shape_mismatch(self):
        """Test that linear rejects a weight of the wrong width."""
        with self.assertRaises(DimensionError):
            kernels.linear(np.zeros((3, 4)), np.zeros((2, 5)))

    def test_batch_norm_training_statistics(self):
        """Test that training mode normalizes per channel and updates running stats."""
        x = self.rng.normal(loc=3.0, scale=2.0, size=(4, 2, 3, 3))
        gamma, beta = np.ones(2), np.zeros(2)

        result = kernels.batch_norm2d(x, gamma, beta, np.zeros(2), np.ones(2), training=True)

        # Assertions
        np.testing.assert_allclose(result.output.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(result.output.var(axis=(0, 2, 3)), 1.0, rtol=1e-4)
        count = 4 * 3 * 3
        unbiased = x.var(axis=(0, 2, 3)) * count / (count - 1)
        np.testing.assert_allclose(result.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(result.running_var, 0.9 + 0.1 * unbiased)

    def test_batch_norm_eval_uses_running_statistics(self):
        """Test that eval mode ignores the batch statistics."""
        x = self.rng.normal(size=(2, 2, 2, 2))
        mean, var = np.array([1.0, -1.0]), np.array([4.0, 0.25])

        result = kernels.batch_norm2d(x, np.ones(2), np.zeros(2), mean, var, training=False)

        expected = (x - mean[None, :, None, None]) / np.sqrt(var[None, :, None, None] + kernels.BN_EPS)
        np.testing.assert_allclose(result.output, expected)
        self.assertIs(result.running_mean, mean)

    def test_gelu_values(self):
        """Test exact-erf GELU at a few points."""
        y = kernels.gelu(np.array([0.0, 10.0, -10.0, 1.0]))

        self.assertEqual(y[0], 0.0)
        self.assertAlmostEqual(y[1], 10.0, places=12)
        self.assertAlmostEqual(y[2], 0.0, places=12)
        self.assertAlmostEqual(y[3], 0.8413447460685429, places=12)

    def test_softmax_rows_sum_to_one(self):
        """Test softmax normalization and its shift invariance."""
        x = self.rng.normal(size=(3, 5)) * 50

        p = kernels.softmax_axis(x, axis=1)

        np.testing.assert_allclose(p.sum(axis=1), 1.0)
        np.testing.assert_allclose(kernels.softmax_axis(x + 1000.0, axis=1), p)

    def test_global_avg_pool(self):
        """Test spatial averaging to (N, C)."""
        x = self.rng.normal(size=(2, 3, 4, 5))

        np.testing.assert_allclose(kernels.global_avg_pool(x), x.mean(axis=(2, 3)))

    def test_permute_and_inverse(self):
        """Test that a permutation followed by its inverse is the identity."""
        x = self.rng.normal(size=(2, 3, 4, 5, 6))
        axes = (0, 1, 4, 2, 3)

        y = kernels.permute(kernels.permute(x, axes), kernels.inverse_permutation(axes))

        np.testing.assert_array_equal(y, x)

    def test_split_and_concat(self):
        """Test that split and concat are inverse along an axis."""
        x = self.rng.normal(size=(2, 7, 3))

        parts = kernels.split(x, [3, 4], axis=1)

        self.assertEqual([p.shape for p in parts], [(2, 3, 3), (2, 4, 3)])
        np.testing.assert_array_equal(kernels.concat(parts, axis=1), x)

    def test_reshape_size_mismatch(self):
        """Test that reshape to a different element count is rejected."""
        with self.assertRaises(DimensionError):
            kernels.reshape(np.zeros((2, 3)), (4, 2))


class TestParallel(unittest.TestCase):
    """Tests for the worker-count control."""

    def tearDown(self):
        """Restore serial execution."""
        parallel.set_worker_count(None)

    @mock.patch.dict(os.environ, {parallel.THREADS_ENV_VAR: "3"})
    def test_env_var_sets_worker_count(self):
        """Test that STRIP_MLP_THREADS is read when no override is set."""
        parallel.set_worker_count(None)

        self.assertEqual(parallel.worker_count(), 3)
        self.assertFalse(parallel.is_deterministic())

    @mock.patch.dict(os.environ, {parallel.THREADS_ENV_VAR: "many"})
    def test_bad_env_var_raises_config_error(self):
        """Test that a non-integer thread count is rejected."""
        parallel.set_worker_count(None)

        with self.assertRaises(ConfigError):
            parallel.worker_count()

    def test_override_wins_over_env(self):
        """Test that set_worker_count takes precedence."""
        with mock.patch.dict(os.environ, {parallel.THREADS_ENV_VAR: "8"}):
            parallel.set_worker_count(0)
            self.assertEqual(parallel.worker_count(), 0)
            self.assertTrue(parallel.is_deterministic())

    def test_threaded_conv_matches_serial(self):
        """Test that batch-parallel convolution gives the serial result."""
        rng = np.random.default_rng(2)
        spec = ConvSpec(4, 8, kernel=3, padding=1, groups=2)
        x = rng.normal(size=(7, 4, 6, 6))
        w = rng.normal(size=spec.weight_shape)

        parallel.set_worker_count(0)
        serial = kernels.conv2d(x, spec, w)
        parallel.set_worker_count(4)
        threaded = kernels.conv2d(x, spec, w)

        np.testing.assert_allclose(threaded, serial, rtol=1e-12, atol=1e-12)


if __name__ == "__main__":
    unittest.main()
