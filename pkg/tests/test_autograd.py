"""Tests for the autograd engine, differentiable ops and gradient suites."""

import unittest

import numpy as np

from strip_mlp.autograd import Tensor, backward, finite_diff_check, make_node, no_grad, ops
from strip_mlp.errors import ConfigError, DimensionError, NumericError, UsageError
from strip_mlp.gradcheck import SUITES, run_suite


class TestBackward(unittest.TestCase):
    """Tests for graph construction and back-propagation."""

    def test_product_rule(self):
        """Test d(x*y + x)/dx = y + 1 and d/dy = x."""
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        y = Tensor(np.array([3.0, -4.0]), requires_grad=True)

        backward(ops.sum(x * y + x))

        np.testing.assert_array_equal(x.grad, [4.0, -3.0])
        np.testing.assert_array_equal(y.grad, [1.0, 2.0])

    def test_shared_node_gradients_accumulate(self):
        """Test that a node used on several paths receives the summed gradient."""
        x = Tensor(np.array(3.0), requires_grad=True)
        h = x * x
        loss = h + h * 2.0

        backward(loss)

        self.assertEqual(float(x.grad), 18.0)

    def test_broadcast_gradient_is_reduced(self):
        """Test that a broadcast operand gets a gradient of its own shape."""
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)

        backward(ops.sum(x * b))

        np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])
        np.testing.assert_array_equal(x.grad, np.tile([1.0, 2.0, 3.0], (2, 1)))

    def test_non_scalar_loss_raises_usage_error(self):
        """Test that backward refuses a non-scalar loss."""
        x = Tensor(np.ones(3), requires_grad=True)

        with self.assertRaises(UsageError):
            backward(x * 2.0)

    def test_unreachable_input_gets_zeros(self):
        """Test that listed inputs the loss does not depend on receive zeros."""
        x = Tensor(np.ones(2), requires_grad=True)
        unused = Tensor(np.ones(3), requires_grad=True)

        grads = backward(ops.sum(x), inputs=[unused])

        np.testing.assert_array_equal(grads[id(unused)], np.zeros(3))

    def test_no_grad_records_nothing(self):
        """Test that ops under no_grad produce untracked tensors."""
        x = Tensor(np.ones(2), requires_grad=True)

        with no_grad():
            y = x * 2.0

        self.assertFalse(y.requires_grad)
        self.assertTrue(y.is_leaf)
        self.assertTrue((x * 2.0).requires_grad)

    def test_incompatible_broadcast_raises_dimension_error(self):
        """Test that mismatched shapes are rejected."""
        with self.assertRaises(DimensionError):
            ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))

    def test_item_needs_single_element(self):
        """Test Tensor.item on a vector."""
        with self.assertRaises(UsageError):
            Tensor(np.ones(2)).item()

    def test_split_concat_gradients(self):
        """Test that gradients flow back through split and concat."""
        x = Tensor(np.arange(6.0).reshape(1, 6), requires_grad=True)
        a, b = ops.split(x, [2, 4], axis=1)
        y = ops.concat([b * 3.0, a], axis=1)

        backward(ops.sum(y))

        np.testing.assert_array_equal(x.grad, [[1.0, 1.0, 3.0, 3.0, 3.0, 3.0]])


class TestCrossEntropy(unittest.TestCase):
    """Tests for the smoothed cross-entropy loss."""

    def test_uniform_logits(self):
        """Test that uniform logits give log K regardless of smoothing."""
        logits = Tensor(np.zeros((4, 10)))

        for smoothing in (0.0, 0.1):
            loss = ops.cross_entropy(logits, np.array([0, 3, 5, 9]), smoothing)
            self.assertAlmostEqual(loss.item(), np.log(10.0), places=12)

    def test_gradient_is_probabilities_minus_target(self):
        """Test the closed-form gradient (softmax - target) / N."""
        rng = np.random.default_rng(0)
        logits = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        labels = np.array([1, 0, 3])

        backward(ops.cross_entropy(logits, labels, 0.1))

        probs = np.exp(logits.data) / np.exp(logits.data).sum(axis=1, keepdims=True)
        target = np.full((3, 4), 0.1 / 4)
        target[np.arange(3), labels] += 0.9
        np.testing.assert_allclose(logits.grad, (probs - target) / 3, atol=1e-15)

    def test_invalid_smoothing(self):
        """Test that smoothing outside [0, 1) is rejected."""
        with self.assertRaises(UsageError):
            ops.cross_entropy(Tensor(np.zeros((1, 2))), np.array([0]), 1.0)

    def test_label_count_mismatch(self):
        """Test that labels must match the batch size."""
        with self.assertRaises(DimensionError):
            ops.cross_entropy(Tensor(np.zeros((2, 2))), np.array([0]), 0.0)

    def test_non_finite_logits_raise(self):
        """Test that NaN logits surface as NumericError."""
        with self.assertRaises(NumericError):
            ops.cross_entropy(Tensor(np.array([[np.nan, 0.0]])), np.array([0]), 0.0)


class TestFiniteDifferences(unittest.TestCase):
    """Tests for the finite-difference checker itself."""

    def test_correct_gradient_passes(self):
        """Test a smooth function with an exact backward rule."""
        x = Tensor(np.random.default_rng(0).normal(size=(3, 3)), requires_grad=True)

        result = finite_diff_check(lambda: ops.sum(ops.gelu(x) * x), x)

        self.assertTrue(result.passed(1e-6))
        self.assertEqual(result.coords_checked, 9)

    def test_wrong_gradient_is_detected(self):
        """Test that a deliberately wrong backward rule fails the check."""
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)

        def doubled_rule(value):
            return make_node(value.data * 3.0, (value,), lambda g: (g * 2.0,), "scale3")

        result = finite_diff_check(lambda: ops.sum(doubled_rule(x)), x)

        self.assertFalse(result.passed(1e-3))
        self.assertAlmostEqual(result.max_error, 0.5, places=5)

    def test_non_finite_function_reports_failure(self):
        """Test that a non-finite value is a failed result, not an exception."""
        x = Tensor(np.array([np.inf]), requires_grad=True)

        result = finite_diff_check(lambda: ops.sum(ops.gelu(x)), x)

        self.assertFalse(result.finite)
        self.assertFalse(result.passed(1.0))

    def test_max_coords_caps_work(self):
        """Test that max_coords limits the perturbed coordinates."""
        x = Tensor(np.ones(100), requires_grad=True)

        result = finite_diff_check(
            lambda: ops.sum(x * x), x, max_coords=5, rng=np.random.default_rng(0)
        )

        self.assertEqual(result.coords_checked, 5)

    def test_non_positive_eps_rejected(self):
        """Test that eps must be positive."""
        x = Tensor(np.ones(1), requires_grad=True)

        with self.assertRaises(UsageError):
            finite_diff_check(lambda: ops.sum(x), x, eps=0.0)


class TestGradientSuites(unittest.TestCase):
    """Every layer's analytic gradients agree with central differences."""

    def test_all_layer_suites_pass(self):
        """Test each suite at relative error <= 1e-5."""
        for name in SUITES:
            with self.subTest(layer=name):
                result = run_suite(name)
                self.assertTrue(
                    result.passed(1e-5),
                    f"{name}: max error {result.max_error:.3e} in {result.failures(1e-5)}",
                )
                self.assertIn("input", result.checks)

    def test_parameter_gradients_are_checked(self):
        """Test that parameterized suites check every trainable tensor."""
        result = run_suite("cgsmm")

        self.assertEqual(
            sorted(result.checks),
            sorted([
                "input",
                "cgsmm.proj_w.weight", "cgsmm.proj_w.bias",
                "cgsmm.fuse_w.weight", "cgsmm.fuse_w.bias",
                "cgsmm.proj_h.weight", "cgsmm.proj_h.bias",
                "cgsmm.fuse_h.weight", "cgsmm.fuse_h.bias",
            ]),
        )

    def test_unknown_suite(self):
        """Test that an unknown layer name is a ConfigError."""
        with self.assertRaises(ConfigError):
            run_suite("attention")


if __name__ == "__main__":
    unittest.main()
