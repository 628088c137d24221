"""Strip MLP layers, mixing blocks and the parameter store they share."""

from .base import Initializer, Module, ParamEntry, ParamStore
from .basic import GRN, BatchNorm2d, Conv2d, Linear, depthwise, pointwise
from .blocks import BlockConfig, ChannelMixingBlock, PatchEmbed, PatchMerge, StripMixingBlock
from .local import LSMM, Reweight
from .strip import (
    CGSMM,
    PGSMM,
    GroupStripProjection,
    StripLayerConfig,
    gsmm,
    resolve_patches,
    strip_matrix,
    strip_mlp_1d,
)

__all__ = [
    "BatchNorm2d",
    "BlockConfig",
    "CGSMM",
    "ChannelMixingBlock",
    "Conv2d",
    "GRN",
    "GroupStripProjection",
    "Initializer",
    "LSMM",
    "Linear",
    "Module",
    "PGSMM",
    "ParamEntry",
    "ParamStore",
    "PatchEmbed",
    "PatchMerge",
    "Reweight",
    "StripLayerConfig",
    "StripMixingBlock",
    "depthwise",
    "gsmm",
    "pointwise",
    "resolve_patches",
    "strip_matrix",
    "strip_mlp_1d",
]
