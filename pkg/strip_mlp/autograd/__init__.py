"""Reverse-mode differentiation over the tensor-core kernels."""

from . import ops
from .engine import Tensor, backward, is_grad_enabled, make_node, no_grad
from .gradcheck import DEFAULT_EPS, GradCheckResult, finite_diff_check

__all__ = [
    "DEFAULT_EPS",
    "GradCheckResult",
    "Tensor",
    "backward",
    "finite_diff_check",
    "is_grad_enabled",
    "make_node",
    "no_grad",
    "ops",
]
