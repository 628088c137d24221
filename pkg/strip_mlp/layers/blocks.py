"""Strip mixing, channel mixing, patch embedding and patch merging blocks."""

import logging
from dataclasses import dataclass

from ..autograd import Tensor, ops
from ..errors import ConfigError
from ..tensor.kernels import ConvSpec
from .base import Initializer, Module, ParamStore, Shape, check_nchw
from .basic import GRN, BatchNorm2d, Conv2d, depthwise, pointwise
from .local import LSMM
from .strip import check_strip_width, gsmm, resolve_patches

logger = logging.getLogger(__name__)

MIXING_CHOICES = ("both", "cgsmm", "lsmm")
TOPOLOGIES = ("cascade", "parallel")


@dataclass(frozen=True)
class BlockConfig:
    """Knobs shared by every Strip Mixing / Channel Mixing block of a model."""

    strip_width: int = 3
    patch_policy: str = "c4"
    mixing: str = "both"
    topology: str = "cascade"
    eq1_mlp_ratio: int = 1
    channel_ratio: int = 3

    def __post_init__(self) -> None:
        check_strip_width(self.strip_width)
        if self.mixing not in MIXING_CHOICES:
            raise ConfigError(f"mixing must be one of {MIXING_CHOICES}, got '{self.mixing}'")
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"topology must be one of {TOPOLOGIES}, got '{self.topology}'")
        if self.eq1_mlp_ratio < 1 or self.channel_ratio < 1:
            raise ConfigError(
                f"expansion ratios must be >= 1, got {self.eq1_mlp_ratio} and {self.channel_ratio}"
            )
        resolve_patches(self.patch_policy, 8)

    def mixing_channels(self, channels: int) -> int:
        """Channels each active mixing branch receives."""
        hidden = channels * self.eq1_mlp_ratio
        if self.mixing == "both":
            if hidden % 2:
                raise ConfigError(f"both mixing branches need an even width, got {hidden}")
            return hidden // 2
        return hidden


class StripMixingBlock(Module):
    """``X_m = GELU(BN(FC(DWSC(X))))``; split, CGSMM | LSMM, concat, FC, + X.

    With a single mixing branch selected the whole of ``X_m`` feeds it.
    """

    def __init__(
        self,
        store: ParamStore,
        prefix: str,
        init: Initializer,
        channels: int,
        height: int,
        width: int,
        cfg: BlockConfig,
    ) -> None:
        super().__init__(store, prefix, init)
        self.channels = channels
        self.cfg = cfg
        self.hidden = channels * cfg.eq1_mlp_ratio
        self.branch_channels = cfg.mixing_channels(channels)
        self.patches = resolve_patches(cfg.patch_policy, self.branch_channels)

        self.dwsc = self.child(depthwise(store, f"{prefix}.dwsc", init, channels, (3, 3), (1, 1)))
        self.fc1 = self.child(pointwise(store, f"{prefix}.fc1", init, channels, self.hidden))
        self.norm = self.child(BatchNorm2d(store, f"{prefix}.norm", init, self.hidden))
        self.gsmm = None
        self.lsmm = None
        if cfg.mixing in ("both", "cgsmm"):
            self.gsmm = self.child(gsmm(
                cfg.topology, store, f"{prefix}.gsmm", init,
                self.branch_channels, height, width, self.patches, cfg.strip_width,
            ))
        if cfg.mixing in ("both", "lsmm"):
            self.lsmm = self.child(LSMM(store, f"{prefix}.lsmm", init, self.branch_channels))
        self.fc2 = self.child(pointwise(store, f"{prefix}.fc2", init, self.hidden, channels))

    def mix(self, x: Tensor) -> Tensor:
        """The token-mixing path without the residual."""
        check_nchw(x, self.channels, self.prefix)
        xm = ops.gelu(self.norm(self.fc1(self.dwsc(x))))
        if self.cfg.mixing == "both":
            half = self.branch_channels
            global_part, local_part = ops.split(xm, [half, half], axis=1)
            mixed = ops.concat([self.gsmm(global_part), self.lsmm(local_part)], axis=1)
        elif self.gsmm is not None:
            mixed = self.gsmm(xm)
        else:
            mixed = self.lsmm(xm)
        return self.fc2(mixed)

    def forward(self, x: Tensor) -> Tensor:
        return self.mix(x) + x

    def macs(self, shape: Shape) -> int:
        _, h, w = shape
        branch = (self.branch_channels, h, w)
        total = self.dwsc.macs(shape) + self.fc1.macs(shape) + self.fc2.macs((self.hidden, h, w))
        if self.gsmm is not None:
            total += self.gsmm.macs(branch)
        if self.lsmm is not None:
            total += self.lsmm.macs(branch)
        return total


class ChannelMixingBlock(Module):
    """Inverted bottleneck: 1x1 expand, GELU, GRN, 1x1 project, + X."""

    def __init__(
        self, store: ParamStore, prefix: str, init: Initializer, channels: int, ratio: int = 3
    ) -> None:
        super().__init__(store, prefix, init)
        if ratio < 1:
            raise ConfigError(f"channel mixing ratio must be >= 1, got {ratio}")
        self.channels = channels
        self.hidden = channels * ratio
        self.fc1 = self.child(pointwise(store, f"{prefix}.fc1", init, channels, self.hidden))
        self.grn = self.child(GRN(store, f"{prefix}.grn", init, self.hidden))
        self.fc2 = self.child(pointwise(store, f"{prefix}.fc2", init, self.hidden, channels))

    def forward(self, x: Tensor) -> Tensor:
        check_nchw(x, self.channels, self.prefix)
        return self.fc2(self.grn(ops.gelu(self.fc1(x)))) + x

    def macs(self, shape: Shape) -> int:
        _, h, w = shape
        return self.fc1.macs(shape) + self.fc2.macs((self.hidden, h, w))


class PatchEmbed(Module):
    """Non-overlapping p x p patches linearly mapped to C channels."""

    def __init__(
        self, store: ParamStore, prefix: str, init: Initializer, patch_size: int, channels: int,
        in_channels: int = 3,
    ) -> None:
        super().__init__(store, prefix, init)
        self.patch_size = patch_size
        self.proj = self.child(Conv2d(
            store, f"{prefix}.proj", init,
            ConvSpec(in_channels, channels, kernel=patch_size, stride=patch_size),
        ))

    def _check(self, h: int, w: int) -> None:
        p = self.patch_size
        if h % p or w % p:
            raise ConfigError(f"image size {h}x{w} is not divisible by patch size {p}")

    def forward(self, img: Tensor) -> Tensor:
        self._check(*img.shape[2:])
        return self.proj(img)

    def output_shape(self, shape: Shape) -> Shape:
        self._check(*shape[1:])
        return self.proj.output_shape(shape)

    def macs(self, shape: Shape) -> int:
        self._check(*shape[1:])
        return self.proj.macs(shape)


class PatchMerge(Module):
    """2x2 neighborhoods concatenated to 4C channels, then a 1x1 map 4C -> 2C.

    Channel ``k*C + c`` of the concatenation holds offset ``k = 2*dw + dh``.
    """

    def __init__(self, store: ParamStore, prefix: str, init: Initializer, channels: int) -> None:
        super().__init__(store, prefix, init)
        self.channels = channels
        self.reduction = self.child(pointwise(store, f"{prefix}.reduction", init, 4 * channels, 2 * channels))

    @staticmethod
    def _check(h: int, w: int) -> None:
        if h % 2 or w % 2:
            raise ConfigError(f"patch merging needs even spatial dims, got {h}x{w}")

    def space_to_depth(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        self._check(h, w)
        blocks = ops.reshape(x, (n, c, h // 2, 2, w // 2, 2))
        return ops.reshape(ops.permute(blocks, (0, 5, 3, 1, 2, 4)), (n, 4 * c, h // 2, w // 2))

    def forward(self, x: Tensor) -> Tensor:
        check_nchw(x, self.channels, self.prefix)
        return self.reduction(self.space_to_depth(x))

    def output_shape(self, shape: Shape) -> Shape:
        c, h, w = shape
        self._check(h, w)
        return (2 * c, h // 2, w // 2)

    def macs(self, shape: Shape) -> int:
        c, h, w = self.output_shape(shape)
        return self.reduction.macs((2 * c, h, w))
