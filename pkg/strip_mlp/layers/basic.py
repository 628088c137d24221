"""Convolution, linear and normalization layers."""

import logging
from typing import Tuple

from ..autograd import Tensor, ops
from ..errors import DimensionError
from ..tensor.kernels import ConvSpec
from .base import (
    BIAS,
    BUFFER,
    SCALE,
    SHIFT,
    WEIGHT,
    Initializer,
    Module,
    ParamStore,
    Shape,
    check_nchw,
    record_bias_adds,
)

logger = logging.getLogger(__name__)

GRN_EPS = 1e-6


class Conv2d(Module):
    def __init__(self, store: ParamStore, prefix: str, init: Initializer, spec: ConvSpec) -> None:
        super().__init__(store, prefix, init)
        self.spec = spec
        self.weight = self.param("weight", init.trunc_normal(spec.weight_shape), WEIGHT)
        self.bias = self.param("bias", init.zeros((spec.out_channels,)), BIAS) if spec.has_bias else None

    def forward(self, x: Tensor) -> Tensor:
        check_nchw(x, self.spec.in_channels, self.prefix)
        return ops.conv2d(x, self.weight, self.bias, self.spec)

    def param_counts(self) -> Tuple[int, int]:
        biases = self.spec.out_channels if self.spec.has_bias else 0
        return self.spec.param_count() - biases, biases

    def output_shape(self, shape: Shape) -> Shape:
        _, h, w = shape
        return (self.spec.out_channels, *self.spec.output_size(h, w))

    def macs(self, shape: Shape) -> int:
        _, h, w = shape
        if self.spec.has_bias:
            ho, wo = self.spec.output_size(h, w)
            record_bias_adds(self.spec.out_channels * ho * wo)
        return self.spec.macs(h, w)


def pointwise(store: ParamStore, prefix: str, init: Initializer, cin: int, cout: int) -> Conv2d:
    """1x1 convolution: a per-position fully-connected map over channels."""
    return Conv2d(store, prefix, init, ConvSpec(cin, cout))


def depthwise(
    store: ParamStore, prefix: str, init: Initializer, channels: int, kernel, padding
) -> Conv2d:
    return Conv2d(
        store, prefix, init, ConvSpec(channels, channels, kernel=kernel, padding=padding, groups=channels)
    )


class Linear(Module):
    def __init__(
        self, store: ParamStore, prefix: str, init: Initializer, in_features: int, out_features: int
    ) -> None:
        super().__init__(store, prefix, init)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.param("weight", init.trunc_normal((out_features, in_features)), WEIGHT)
        self.bias = self.param("bias", init.zeros((out_features,)), BIAS)

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)

    def param_counts(self) -> Tuple[int, int]:
        return self.in_features * self.out_features, self.out_features

    def output_shape(self, shape: Shape) -> Shape:
        if tuple(shape) != (self.in_features,):
            raise DimensionError(f"{self.prefix}: expected ({self.in_features},), got {tuple(shape)}")
        return (self.out_features,)

    def macs(self, shape: Shape) -> int:
        self.output_shape(shape)
        record_bias_adds(self.out_features)
        return self.in_features * self.out_features


class BatchNorm2d(Module):
    """Batch norm with running statistics stored as buffers."""

    def __init__(self, store: ParamStore, prefix: str, init: Initializer, channels: int) -> None:
        super().__init__(store, prefix, init)
        self.channels = channels
        self.gamma = self.param("gamma", init.ones((channels,)), SCALE)
        self.beta = self.param("beta", init.zeros((channels,)), SHIFT)
        self.running_mean = self.param("running_mean", init.zeros((channels,)), BUFFER)
        self.running_var = self.param("running_var", init.ones((channels,)), BUFFER)

    def forward(self, x: Tensor) -> Tensor:
        check_nchw(x, self.channels, self.prefix)
        return ops.batch_norm2d(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.training
        )

    def param_counts(self) -> Tuple[int, int]:
        return self.channels, self.channels

    def macs(self, shape: Shape) -> int:
        return 0


class GRN(Module):
    """Global response normalization.

    ``G_c`` is the spatial L2 norm of channel c, ``N_c = G_c / (mean_c G + eps)``
    and ``y = gamma * (x * N) + beta + x``. With gamma = beta = 0 (the initial
    state) the layer is the identity.
    """

    def __init__(self, store: ParamStore, prefix: str, init: Initializer, channels: int) -> None:
        super().__init__(store, prefix, init)
        self.channels = channels
        self.gamma = self.param("gamma", init.zeros((channels,)), SCALE)
        self.beta = self.param("beta", init.zeros((channels,)), SHIFT)

    def forward(self, x: Tensor) -> Tensor:
        check_nchw(x, self.channels, self.prefix)
        g = ops.sqrt(ops.sum(x * x, axis=(2, 3), keepdims=True))
        n = g / (ops.mean(g, axis=1, keepdims=True) + GRN_EPS)
        gamma = ops.reshape(self.gamma, (1, self.channels, 1, 1))
        beta = ops.reshape(self.beta, (1, self.channels, 1, 1))
        return gamma * (x * n) + beta + x

    def param_counts(self) -> Tuple[int, int]:
        return self.channels, self.channels

    def macs(self, shape: Shape) -> int:
        return 0
