"""Strip MLP layers and the group strip mixing modules.

A strip layer maps every line of a feature map (a column, or a row) from a
band of ``k`` adjacent lines: output column ``j`` is ``W @ cat(X[:, j-k//2],
..., X[:, j+k//2])`` with zero lines beyond the border. The group variant
splits the channels into ``P`` channel patches with unshared weights; all
channels of one patch share them.

Both axes are realized as a grouped convolution: the mixed axis becomes the
channel axis (``P * L`` channels in ``P`` groups) and the band runs along the
other spatial axis with a ``(1, k)`` kernel.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..autograd import Tensor, ops
from ..errors import ConfigError, DimensionError
from ..tensor.kernels import ConvSpec, inverse_permutation
from .base import BIAS, WEIGHT, Initializer, Module, ParamStore, Shape, check_nchw, record_bias_adds
from .basic import pointwise

logger = logging.getLogger(__name__)

ROW = "row"
COLUMN = "column"
AXES = (ROW, COLUMN)

PATCH_POLICIES = {"c1": 1, "c2": 2, "c4": 4, "c8": 8}


def resolve_patches(policy: str, channels: int) -> int:
    """Channel-patch count for ``channels`` under a policy (c1/c2/c4/c8/one)."""
    if policy == "one":
        return 1
    if policy not in PATCH_POLICIES:
        raise ConfigError(f"unknown patch policy '{policy}', expected one of c1, c2, c4, c8, one")
    divisor = PATCH_POLICIES[policy]
    if channels % divisor:
        raise ConfigError(f"patch policy {policy} needs channels divisible by {divisor}, got {channels}")
    return channels // divisor


def check_strip_width(strip_width: int) -> None:
    if strip_width < 1 or strip_width % 2 == 0:
        raise ConfigError(f"strip width must be odd and >= 1, got {strip_width}")


def check_patches(channels: int, patches: int) -> None:
    if patches < 1 or channels % patches:
        raise ConfigError(f"patch count {patches} does not divide {channels} channels")


@dataclass(frozen=True)
class StripLayerConfig:
    """Geometry of one group strip projection.

    ``span`` is the length of the mixed axis (H for columns, W for rows).
    """

    axis: str
    span: int
    patches: int = 1
    strip_width: int = 3

    def __post_init__(self) -> None:
        if self.axis not in AXES:
            raise ConfigError(f"strip axis must be 'row' or 'column', got '{self.axis}'")
        check_strip_width(self.strip_width)
        if self.patches < 1 or self.span < 1:
            raise ConfigError(f"patches and span must be >= 1, got {self.patches}, {self.span}")

    def conv_spec(self, bias: bool = True) -> ConvSpec:
        k = self.strip_width
        channels = self.patches * self.span
        return ConvSpec(
            channels, channels, kernel=(1, k), padding=(0, k // 2), groups=self.patches, has_bias=bias
        )


def strip_mlp_1d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor], axis: str, strip_width: int
) -> Tensor:
    """Apply a group strip layer to a channel-patched view.

    Args:
        x: Input of shape (N, P, G, H, W): P channel patches of G channels.
        weight: Grouped conv weight of shape (P*L, L, 1, k), L the mixed axis.
        bias: Optional bias of shape (P*L,).
        axis: ``column`` mixes along H from a band of columns, ``row`` mixes
            along W from a band of rows.
        strip_width: Band width k (odd).

    Returns:
        Tensor of the input's shape.
    """
    check_strip_width(strip_width)
    if axis not in AXES:
        raise ConfigError(f"strip axis must be 'row' or 'column', got '{axis}'")
    if x.ndim != 5:
        raise DimensionError(f"strip_mlp_1d expects (N, P, G, H, W), got {x.shape}")
    n, p, g, h, w = x.shape
    if axis == COLUMN:
        span, order = h, (0, 1, 3, 2, 4)
    else:
        span, order = w, (0, 1, 4, 2, 3)
    cfg = StripLayerConfig(axis, span, p, strip_width)
    spec = cfg.conv_spec(bias is not None)
    if weight.shape != spec.weight_shape:
        raise DimensionError(f"strip weight {weight.shape} does not match {spec.weight_shape}")

    # (N, P, L, G, other) -> (N, P*L, G, other)
    lines = ops.permute(x, order)
    mixed = ops.conv2d(ops.reshape(lines, (n, p * span, *lines.shape[3:])), weight, bias, spec)
    mixed = ops.reshape(mixed, lines.shape)
    return ops.permute(mixed, inverse_permutation(order))


def strip_matrix(weight: np.ndarray, patch: int, span: int, strip_width: int) -> np.ndarray:
    """The dense (L, k*L) matrix patch ``patch`` applies to a band of k lines.

    Column ``t*L + i`` multiplies element i of band line t (t = 0 is the line
    ``k//2`` before the output line).
    """
    block = weight[patch * span:(patch + 1) * span, :, 0, :]
    return np.concatenate([block[:, :, t] for t in range(strip_width)], axis=1)


def patch_view(x: Tensor, patches: int) -> Tensor:
    """(N, C, H, W) -> (N, P, C/P, H, W); channel ``c = g*P + p`` lands in patch p."""
    n, c, h, w = x.shape
    check_patches(c, patches)
    return ops.permute(ops.reshape(x, (n, c // patches, patches, h, w)), (0, 2, 1, 3, 4))


def merge_patch_view(x: Tensor) -> Tensor:
    n, p, g, h, w = x.shape
    return ops.reshape(ops.permute(x, (0, 2, 1, 3, 4)), (n, p * g, h, w))


class GroupStripProjection(Module):
    """Group strip MLP layer over one spatial axis of an (N, C, H, W) map."""

    def __init__(
        self,
        store: ParamStore,
        prefix: str,
        init: Initializer,
        channels: int,
        cfg: StripLayerConfig,
        bias: bool = True,
    ) -> None:
        super().__init__(store, prefix, init)
        check_patches(channels, cfg.patches)
        self.channels = channels
        self.cfg = cfg
        self.spec = cfg.conv_spec(bias)
        self.weight = self.param("weight", init.trunc_normal(self.spec.weight_shape), WEIGHT)
        self.bias = self.param("bias", init.zeros((self.spec.out_channels,)), BIAS) if bias else None

    def _check_span(self, h: int, w: int) -> None:
        span = h if self.cfg.axis == COLUMN else w
        if span != self.cfg.span:
            raise DimensionError(
                f"{self.prefix}: {self.cfg.axis} strip built for length {self.cfg.span}, input has {span}"
            )

    def forward(self, x: Tensor) -> Tensor:
        check_nchw(x, self.channels, self.prefix)
        self._check_span(*x.shape[2:])
        view = patch_view(x, self.cfg.patches)
        return merge_patch_view(
            strip_mlp_1d(view, self.weight, self.bias, self.cfg.axis, self.cfg.strip_width)
        )

    def param_counts(self) -> Tuple[int, int]:
        biases = self.spec.out_channels if self.spec.has_bias else 0
        return self.spec.param_count() - biases, biases

    def macs(self, shape: Shape) -> int:
        c, h, w = shape
        self._check_span(h, w)
        other = w if self.cfg.axis == COLUMN else h
        if self.spec.has_bias:
            record_bias_adds(c * h * w)
        return self.spec.macs(c // self.cfg.patches, other)


class CGSMM(Module):
    """Cascade group strip mixing module.

    Row strip layer, channel fuse of ``cat(x_w, x)`` (2C -> C), column strip
    layer, channel fuse of ``cat(x_h, x)``. No nonlinearity inside. The fuses
    are where channel patches exchange information.
    """

    def __init__(
        self,
        store: ParamStore,
        prefix: str,
        init: Initializer,
        channels: int,
        height: int,
        width: int,
        patches: int,
        strip_width: int = 3,
    ) -> None:
        super().__init__(store, prefix, init)
        check_patches(channels, patches)
        self.channels = channels
        self.patches = patches
        self.proj_w = self.child(GroupStripProjection(
            store, f"{prefix}.proj_w", init, channels, StripLayerConfig(ROW, width, patches, strip_width)
        ))
        self.fuse_w = self.child(pointwise(store, f"{prefix}.fuse_w", init, 2 * channels, channels))
        self.proj_h = self.child(GroupStripProjection(
            store, f"{prefix}.proj_h", init, channels, StripLayerConfig(COLUMN, height, patches, strip_width)
        ))
        self.fuse_h = self.child(pointwise(store, f"{prefix}.fuse_h", init, 2 * channels, channels))

    def forward(self, x: Tensor) -> Tensor:
        x_w = self.fuse_w(ops.concat([self.proj_w(x), x], axis=1))
        x_h = self.proj_h(x_w)
        return self.fuse_h(ops.concat([x_h, x], axis=1))

    def interaction_counts(self) -> Tuple[int, int]:
        w1, b1 = self.proj_w.param_counts()
        w2, b2 = self.proj_h.param_counts()
        return w1 + w2, b1 + b2

    def macs(self, shape: Shape) -> int:
        c, h, w = shape
        fused = (2 * c, h, w)
        return (
            self.proj_w.macs(shape) + self.fuse_w.macs(fused)
            + self.proj_h.macs(shape) + self.fuse_h.macs(fused)
        )


class PGSMM(Module):
    """Parallel group strip mixing module.

    Row and column strip layers both read the input; one fuse maps
    ``cat(x_w, x_h, x)`` (3C -> C).
    """

    def __init__(
        self,
        store: ParamStore,
        prefix: str,
        init: Initializer,
        channels: int,
        height: int,
        width: int,
        patches: int,
        strip_width: int = 3,
    ) -> None:
        super().__init__(store, prefix, init)
        check_patches(channels, patches)
        self.channels = channels
        self.patches = patches
        self.proj_w = self.child(GroupStripProjection(
            store, f"{prefix}.proj_w", init, channels, StripLayerConfig(ROW, width, patches, strip_width)
        ))
        self.proj_h = self.child(GroupStripProjection(
            store, f"{prefix}.proj_h", init, channels, StripLayerConfig(COLUMN, height, patches, strip_width)
        ))
        self.fuse = self.child(pointwise(store, f"{prefix}.fuse", init, 3 * channels, channels))

    def forward(self, x: Tensor) -> Tensor:
        return self.fuse(ops.concat([self.proj_w(x), self.proj_h(x), x], axis=1))

    def interaction_counts(self) -> Tuple[int, int]:
        w1, b1 = self.proj_w.param_counts()
        w2, b2 = self.proj_h.param_counts()
        return w1 + w2, b1 + b2

    def macs(self, shape: Shape) -> int:
        c, h, w = shape
        return self.proj_w.macs(shape) + self.proj_h.macs(shape) + self.fuse.macs((3 * c, h, w))


def gsmm(
    topology: str,
    store: ParamStore,
    prefix: str,
    init: Initializer,
    channels: int,
    height: int,
    width: int,
    patches: int,
    strip_width: int = 3,
) -> Module:
    """Build the cascade or parallel group strip mixing module."""
    if topology == "cascade":
        return CGSMM(store, prefix, init, channels, height, width, patches, strip_width)
    if topology == "parallel":
        return PGSMM(store, prefix, init, channels, height, width, patches, strip_width)
    raise ConfigError(f"unknown strip topology '{topology}', expected cascade or parallel")
