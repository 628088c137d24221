"""Differentiable operations over :class:`Tensor` nodes."""

from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import DimensionError, UsageError
from ..tensor import kernels
from ..tensor.kernels import BN_EPS, BN_MOMENTUM, DTYPE, ConvSpec, ensure_finite
from .engine import Tensor, make_node

Operand = Union[Tensor, float, int, np.ndarray]


def as_tensor(value: Operand) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=DTYPE))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# --- elementwise arithmetic -----------------------------------------------


def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    value = ensure_finite(a.data + b.data, "add")
    return make_node(
        value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    value = ensure_finite(a.data - b.data, "sub")
    return make_node(
        value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    value = ensure_finite(a.data * b.data, "mul")
    return make_node(
        value,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    value = ensure_finite(a.data / b.data, "div")
    return make_node(
        value,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
        "div",
    )


def sqrt(x: Tensor) -> Tensor:
    value = ensure_finite(np.sqrt(x.data), "sqrt")

    def rule(g):
        # zero subgradient where the root is exactly 0
        safe = np.where(value > 0, value, 1.0)
        return (np.where(value > 0, g / (2.0 * safe), 0.0),)

    return make_node(value, (x,), rule, "sqrt")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    value = np.sum(x.data, axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(np.asarray(value, dtype=DTYPE), (x,), rule, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = range(x.ndim) if axis is None else (axis if isinstance(axis, tuple) else (axis,))
    count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# --- tensor-core kernels ----------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    value = kernels.linear(x.data, w.data, None if b is None else b.data)

    def rule(g):
        gx, gw, gb = kernels.linear_backward(g, x.data, w.data)
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_node(value, parents, rule, "linear")


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor], spec: ConvSpec) -> Tensor:
    value = kernels.conv2d(x.data, spec, w.data, None if b is None else b.data)

    def rule(g):
        gx, gw, gb = kernels.conv2d_backward(g, x.data, w.data, spec)
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_node(value, parents, rule, "conv2d")


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    training: bool,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """Batch norm whose running statistics live in two buffer tensors.

    In training mode the buffers' ``data`` is replaced by the updated
    statistics; their old arrays are left untouched.
    """
    result = kernels.batch_norm2d(
        x.data, gamma.data, beta.data, running_mean.data, running_var.data, training, eps, momentum
    )
    if training:
        running_mean.data = result.running_mean
        running_var.data = result.running_var
    gamma_value = gamma.data
    return make_node(
        result.output,
        (x, gamma, beta),
        lambda g: kernels.batch_norm2d_backward(g, result, gamma_value, training),
        "batch_norm2d",
    )


def gelu(x: Tensor) -> Tensor:
    return make_node(kernels.gelu(x.data), (x,), lambda g: (kernels.gelu_backward(g, x.data),), "gelu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    probs = kernels.softmax_axis(x.data, axis)
    return make_node(probs, (x,), lambda g: (kernels.softmax_backward(g, probs, axis),), "softmax")


def global_avg_pool(x: Tensor) -> Tensor:
    shape = x.shape
    return make_node(
        kernels.global_avg_pool(x.data),
        (x,),
        lambda g: (kernels.global_avg_pool_backward(g, shape),),
        "global_avg_pool",
    )


# --- layout -------------------------------------------------------------------


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = kernels.inverse_permutation(axes)
    return make_node(
        kernels.permute(x.data, axes),
        (x,),
        lambda g: (np.ascontiguousarray(np.transpose(g, inverse)),),
        "permute",
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    return make_node(
        kernels.reshape(x.data, shape),
        (x,),
        lambda g: (np.reshape(g, original),),
        "reshape",
    )


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    value = kernels.concat([t.data for t in tensors], axis)
    sizes = [t.shape[axis] for t in tensors]

    def rule(g):
        return kernels.split(g, sizes, axis)

    return make_node(value, tensors, rule, "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int) -> List[Tensor]:
    pieces = kernels.split(x.data, sizes, axis)
    axis = axis % x.ndim
    outputs = []
    start = 0
    for piece, size in zip(pieces, sizes):
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, start + size)
        region = tuple(index)

        def rule(g, region=region):
            full = np.zeros(x.shape, dtype=DTYPE)
            full[region] = g
            return (full,)

        outputs.append(make_node(piece, (x,), rule, "split"))
        start += size
    return outputs


# --- losses -------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels: np.ndarray, smoothing: float = 0.0) -> Tensor:
    """Mean cross-entropy of ``logits`` (N, K) against integer labels.

    With ``smoothing`` > 0 the target puts ``1 - smoothing`` on the label and
    spreads ``smoothing`` uniformly over all K classes.
    """
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects (N, K) logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"cross_entropy: {labels.shape[0]} labels for {n} rows")
    if n == 0:
        raise UsageError("cross_entropy of an empty batch")
    if not 0.0 <= smoothing < 1.0:
        raise UsageError(f"label smoothing must be in [0, 1), got {smoothing}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    target = np.full((n, k), smoothing / k, dtype=DTYPE)
    target[np.arange(n), labels] += 1.0 - smoothing
    value = ensure_finite(np.asarray(-(target * log_probs).sum() / n), "cross_entropy")

    def rule(g):
        return ((np.exp(log_probs) - target) * (g / n),)

    return make_node(value, (logits,), rule, "cross_entropy")
