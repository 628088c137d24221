"""Numerical kernels on float64 numpy arrays.

Forward kernels return fresh arrays and never modify their inputs. Each
differentiable kernel has a matching ``*_backward`` that maps the upstream
gradient to gradients of its inputs; the autograd layer wires them together.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from ..errors import ConfigError, DimensionError, NumericError
from .parallel import map_batch

logger = logging.getLogger(__name__)

DTYPE = np.float64

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def ensure_finite(array: np.ndarray, op: str) -> np.ndarray:
    """Raise NumericError if ``array`` holds NaN or Inf."""
    if not np.all(np.isfinite(array)):
        raise NumericError(f"non-finite values produced by '{op}'")
    return array


def _pair(value) -> Tuple[int, int]:
    if isinstance(value, int):
        return (value, value)
    first, second = value
    return (int(first), int(second))


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a (grouped) 2D cross-correlation."""

    in_channels: int
    out_channels: int
    kernel: Tuple[int, int] = (1, 1)
    stride: Tuple[int, int] = (1, 1)
    padding: Tuple[int, int] = (0, 0)
    groups: int = 1
    has_bias: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "padding", _pair(self.padding))
        if self.groups < 1:
            raise ConfigError(f"groups must be >= 1, got {self.groups}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(
                f"channel counts must be positive, got {self.in_channels}->{self.out_channels}"
            )
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"channels {self.in_channels}->{self.out_channels} not divisible by groups={self.groups}"
            )
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ConfigError(f"kernel {self.kernel} and stride {self.stride} must be positive")
        if min(self.padding) < 0:
            raise ConfigError(f"padding {self.padding} must be non-negative")

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        kh, kw = self.kernel
        return (self.out_channels, self.in_channels // self.groups, kh, kw)

    def param_count(self) -> int:
        kh, kw = self.kernel
        count = self.out_channels * (self.in_channels // self.groups) * kh * kw
        if self.has_bias:
            count += self.out_channels
        return count

    def output_size(self, height: int, width: int) -> Tuple[int, int]:
        """Spatial output size; raises ConfigError when it is not integral."""
        sizes = []
        for extent, k, s, p, axis in zip(
            (height, width), self.kernel, self.stride, self.padding, ("height", "width")
        ):
            span = extent + 2 * p - k
            if span < 0 or span % s:
                raise ConfigError(
                    f"conv output {axis} is not integral: ({extent}+2*{p}-{k})/{s}+1"
                )
            sizes.append(span // s + 1)
        return sizes[0], sizes[1]

    def macs(self, height: int, width: int) -> int:
        """Multiply-accumulate count for one sample of the given input size."""
        ho, wo = self.output_size(height, width)
        kh, kw = self.kernel
        return self.out_channels * ho * wo * (self.in_channels // self.groups) * kh * kw


# --- dense maps -----------------------------------------------------------


def linear(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    """``y[r, o] = sum_i x[r, i] * w[o, i] + b[o]``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} does not match weight {w.shape}")
    y = x @ w.T
    if b is not None:
        y = y + b
    return ensure_finite(y, "linear")


def linear_backward(
    grad: np.ndarray, x: np.ndarray, w: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return grad @ w, grad.T @ x, grad.sum(axis=0)


# --- convolution ----------------------------------------------------------


def _check_conv_input(x: np.ndarray, spec: ConvSpec, w: np.ndarray) -> None:
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW input, got shape {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise DimensionError(
            f"conv2d: input has {x.shape[1]} channels, spec expects {spec.in_channels}"
        )
    if tuple(w.shape) != spec.weight_shape:
        raise DimensionError(f"conv2d: weight {w.shape} does not match spec {spec.weight_shape}")


def _im2col(x: np.ndarray, spec: ConvSpec, ho: int, wo: int) -> np.ndarray:
    """Columns laid out as (groups, N*ho*wo, Cg*kh*kw)."""
    n, c = x.shape[:2]
    kh, kw = spec.kernel
    sh, sw = spec.stride
    ph, pw = spec.padding
    g = spec.groups
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    cols = windows.reshape(n, g, c // g, ho, wo, kh, kw).transpose(1, 0, 3, 4, 2, 5, 6)
    return cols.reshape(g, n * ho * wo, (c // g) * kh * kw)


def _weight_matrix(w: np.ndarray, spec: ConvSpec) -> np.ndarray:
    g = spec.groups
    return w.reshape(g, spec.out_channels // g, -1).transpose(0, 2, 1)


def _conv2d_serial(x: np.ndarray, w: np.ndarray, spec: ConvSpec) -> np.ndarray:
    n, _, h, wd = x.shape
    ho, wo = spec.output_size(h, wd)
    if spec.kernel == (1, 1) and spec.stride == (1, 1) and spec.padding == (0, 0) and spec.groups == 1:
        out = np.matmul(w.reshape(spec.out_channels, spec.in_channels), x.reshape(n, spec.in_channels, h * wd))
        return out.reshape(n, spec.out_channels, ho, wo)
    cols = _im2col(x, spec, ho, wo)
    out = np.matmul(cols, _weight_matrix(w, spec))
    g = spec.groups
    out = out.reshape(g, n, ho, wo, spec.out_channels // g).transpose(1, 0, 4, 2, 3)
    return out.reshape(n, spec.out_channels, ho, wo)


def conv2d(
    x: np.ndarray, spec: ConvSpec, w: np.ndarray, b: Optional[np.ndarray] = None
) -> np.ndarray:
    """Grouped cross-correlation with zero padding.

    Args:
        x: Input of shape (N, Cin, H, W).
        spec: Convolution geometry.
        w: Weight of shape (Cout, Cin/groups, kh, kw).
        b: Optional bias of shape (Cout,).

    Returns:
        Output of shape (N, Cout, H', W').

    Raises:
        DimensionError: If the input or weight shape does not fit the spec.
        ConfigError: If the output size is not integral.
    """
    _check_conv_input(x, spec, w)
    spec.output_size(x.shape[2], x.shape[3])
    y = map_batch(lambda chunk: _conv2d_serial(chunk, w, spec), x)
    if b is not None:
        y = y + b[None, :, None, None]
    return ensure_finite(y, "conv2d")


def conv2d_backward(
    grad: np.ndarray, x: np.ndarray, w: np.ndarray, spec: ConvSpec
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d with respect to input, weight and bias."""
    n, c, h, wd = x.shape
    ho, wo = grad.shape[2], grad.shape[3]
    g = spec.groups
    og = spec.out_channels // g
    grad_b = grad.sum(axis=(0, 2, 3))
    if spec.kernel == (1, 1) and spec.stride == (1, 1) and spec.padding == (0, 0) and g == 1:
        w2 = w.reshape(spec.out_channels, c)
        gm = grad.reshape(n, spec.out_channels, h * wd)
        xm = x.reshape(n, c, h * wd)
        grad_w = np.tensordot(gm, xm, axes=([0, 2], [0, 2])).reshape(w.shape)
        grad_x = np.matmul(w2.T, gm).reshape(x.shape)
        return grad_x, grad_w, grad_b

    cols = _im2col(x, spec, ho, wo)
    gm = grad.reshape(n, g, og, ho, wo).transpose(1, 0, 3, 4, 2).reshape(g, n * ho * wo, og)
    grad_w = np.matmul(cols.transpose(0, 2, 1), gm).transpose(0, 2, 1).reshape(w.shape)

    kh, kw = spec.kernel
    sh, sw = spec.stride
    ph, pw = spec.padding
    dcols = np.matmul(gm, _weight_matrix(w, spec).transpose(0, 2, 1))
    dcols = dcols.reshape(g, n, ho, wo, c // g, kh, kw).transpose(1, 0, 4, 2, 3, 5, 6)
    dcols = dcols.reshape(n, c, ho, wo, kh, kw)
    dxp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += dcols[..., i, j]
    grad_x = dxp[:, :, ph:ph + h, pw:pw + wd]
    return grad_x, grad_w, grad_b


# --- normalization --------------------------------------------------------


@dataclass
class BatchNormResult:
    """Output of a batch-norm forward pass plus what backward needs."""

    output: np.ndarray
    normalized: np.ndarray
    inv_std: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


def batch_norm2d(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> BatchNormResult:
    """Per-channel batch normalization over (N, H, W).

    In training mode the batch statistics normalize the input and the
    returned running statistics are the momentum-updated copies (unbiased
    variance); in eval mode the running statistics are used and returned
    unchanged.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(
            f"batch_norm2d: input {x.shape} incompatible with gamma {gamma.shape}/beta {beta.shape}"
        )
    count = x.shape[0] * x.shape[2] * x.shape[3]
    if training:
        if count < 1:
            raise DimensionError("batch_norm2d: training mode needs at least one value per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        unbiased = var * count / (count - 1) if count > 1 else var
        new_mean = (1.0 - momentum) * running_mean + momentum * mean
        new_var = (1.0 - momentum) * running_var + momentum * unbiased
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    normalized = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * normalized + beta[None, :, None, None]
    return BatchNormResult(ensure_finite(out, "batch_norm2d"), normalized, inv_std, new_mean, new_var)


def batch_norm2d_backward(
    grad: np.ndarray, result: BatchNormResult, gamma: np.ndarray, training: bool
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    axes = (0, 2, 3)
    xhat = result.normalized
    grad_gamma = (grad * xhat).sum(axis=axes)
    grad_beta = grad.sum(axis=axes)
    scale = (gamma * result.inv_std)[None, :, None, None]
    if not training:
        return grad * scale, grad_gamma, grad_beta
    count = grad.shape[0] * grad.shape[2] * grad.shape[3]
    grad_x = scale / count * (
        count * grad
        - grad_beta[None, :, None, None]
        - xhat * grad_gamma[None, :, None, None]
    )
    return grad_x, grad_gamma, grad_beta


# --- elementwise and reductions ------------------------------------------


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, ``x * Phi(x)`` with the erf form of the Gaussian CDF."""
    return ensure_finite(0.5 * x * (1.0 + erf(x * _SQRT_HALF)), "gelu")


def gelu_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return grad * (cdf + x * pdf)


def softmax_axis(x: np.ndarray, axis: int) -> np.ndarray:
    """Softmax along ``axis`` with max subtraction."""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for rank {x.ndim}")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return ensure_finite(e / e.sum(axis=axis, keepdims=True), "softmax")


def softmax_backward(grad: np.ndarray, probs: np.ndarray, axis: int) -> np.ndarray:
    return probs * (grad - (grad * probs).sum(axis=axis, keepdims=True))


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Mean over the spatial axes of an NCHW array."""
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise DimensionError(f"global_avg_pool expects non-empty NCHW input, got {x.shape}")
    return ensure_finite(x.mean(axis=(2, 3)), "global_avg_pool")


def global_avg_pool_backward(grad: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    n, c, h, w = shape
    return np.broadcast_to(grad[:, :, None, None] / (h * w), (n, c, h, w)).copy()


# --- data movement --------------------------------------------------------


def permute(x: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permute: {tuple(axes)} is not a permutation of rank {x.ndim}")
    return np.ascontiguousarray(np.transpose(x, axes))


def inverse_permutation(axes: Sequence[int]) -> Tuple[int, ...]:
    inverse = [0] * len(axes)
    for position, axis in enumerate(axes):
        inverse[axis] = position
    return tuple(inverse)


def reshape(x: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}")
    return np.reshape(x, tuple(shape))


def concat(arrays: Sequence[np.ndarray], axis: int) -> np.ndarray:
    if not arrays:
        raise DimensionError("concat: nothing to concatenate")
    reference = arrays[0].shape
    for array in arrays[1:]:
        if array.ndim != len(reference) or any(
            a != b for i, (a, b) in enumerate(zip(array.shape, reference)) if i != axis % len(reference)
        ):
            raise DimensionError(f"concat: shapes {[a.shape for a in arrays]} disagree off axis {axis}")
    return np.concatenate(arrays, axis=axis)


def split(x: np.ndarray, sizes: Sequence[int], axis: int) -> List[np.ndarray]:
    if sum(sizes) != x.shape[axis] or any(s < 0 for s in sizes):
        raise DimensionError(f"split: sizes {tuple(sizes)} do not cover axis of length {x.shape[axis]}")
    boundaries = np.cumsum(sizes)[:-1]
    return [np.ascontiguousarray(part) for part in np.split(x, boundaries, axis=axis)]


def layout(x, op: str, *args):
    """Dispatch a pure data-movement operation by name.

    Args:
        x: Input array (a sequence of arrays for ``concat``).
        op: One of ``permute``, ``reshape``, ``concat``, ``split``.
        *args: The operation's arguments (axes, shape, axis, or sizes and axis).

    Returns:
        The moved array, or a list of arrays for ``split``.
    """
    if op == "permute":
        return permute(x, *args)
    if op == "reshape":
        return reshape(x, *args)
    if op == "concat":
        return concat(x, *args)
    if op == "split":
        return split(x, *args)
    raise ConfigError(f"unknown layout op '{op}'")
