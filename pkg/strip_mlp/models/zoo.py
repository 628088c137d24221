"""Four-stage Strip-MLP network, its presets and its forward pass."""

import logging
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..autograd import Tensor, ops
from ..errors import ConfigError, NumericError
from ..layers import (
    BlockConfig,
    ChannelMixingBlock,
    Initializer,
    Linear,
    Module,
    ParamStore,
    PatchEmbed,
    PatchMerge,
    StripMixingBlock,
)
from ..layers.base import Shape
from ..layers.basic import Conv2d
from ..tensor.kernels import ConvSpec

logger = logging.getLogger(__name__)

NUM_STAGES = 4
SKIP_STRIDE = 4


@dataclass(frozen=True)
class ModelConfig:
    """Hyper-parameters of one Strip-MLP network.

    Stage s (1-based) runs at ``channels * 2**(s-1)`` channels and spatial
    size ``resolution / patch_size / 2**(s-1)``.
    """

    variant: str = "custom"
    channels: int = 80
    depths: Tuple[int, int, int, int] = (2, 2, 6, 2)
    patch_size: int = 4
    num_classes: int = 1000
    resolution: int = 224
    in_channels: int = 3
    strip_width: int = 3
    patch_policy: str = "c4"
    topology: str = "cascade"
    mixing: str = "both"
    eq1_mlp_ratio: int = 1
    channel_ratio: int = 3

    def __post_init__(self) -> None:
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        if len(self.depths) != NUM_STAGES or min(self.depths) < 1:
            raise ConfigError(f"depths must be {NUM_STAGES} positive integers, got {self.depths}")
        if self.channels < 1 or self.num_classes < 1 or self.in_channels < 1:
            raise ConfigError("channels, num_classes and in_channels must be positive")
        if self.patch_size < 1 or self.resolution % (self.patch_size * 8):
            raise ConfigError(
                f"resolution {self.resolution} must be divisible by patch_size*8 = {self.patch_size * 8}"
            )
        self.block_config()

    def block_config(self) -> BlockConfig:
        return BlockConfig(
            strip_width=self.strip_width,
            patch_policy=self.patch_policy,
            mixing=self.mixing,
            topology=self.topology,
            eq1_mlp_ratio=self.eq1_mlp_ratio,
            channel_ratio=self.channel_ratio,
        )

    def stage_channels(self, stage: int) -> int:
        return self.channels * 2 ** stage

    def stage_resolution(self, stage: int) -> int:
        return self.resolution // self.patch_size // 2 ** stage

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["depths"] = list(self.depths)
        return data


VARIANTS: Dict[str, ModelConfig] = {
    "tstar": ModelConfig(variant="tstar", channels=80, depths=(2, 2, 6, 2)),
    "t": ModelConfig(variant="t", channels=80, depths=(2, 2, 12, 2)),
    "s": ModelConfig(variant="s", channels=96, depths=(2, 2, 18, 2)),
    "b": ModelConfig(variant="b", channels=112, depths=(2, 2, 18, 2)),
    "tiny": ModelConfig(
        variant="tiny", channels=32, depths=(1, 1, 2, 1), patch_size=2, num_classes=10, resolution=32
    ),
}


def variant_config(name: str, **overrides) -> ModelConfig:
    """A preset with field overrides, e.g. ``variant_config("b", num_classes=100)``."""
    try:
        base = VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown variant '{name}', expected one of {', '.join(VARIANTS)}")
    return replace(base, **overrides)


class Stage(Module):
    """``depth`` repetitions of [Strip Mixing Block; Channel Mixing Block]."""

    def __init__(
        self, store: ParamStore, prefix: str, init: Initializer, channels: int, size: int,
        depth: int, cfg: BlockConfig,
    ) -> None:
        super().__init__(store, prefix, init)
        self.channels = channels
        self.size = size
        self.blocks: List[Module] = []
        for i in range(depth):
            self.blocks.append(self.child(StripMixingBlock(
                store, f"{prefix}.{i}.strip", init, channels, size, size, cfg
            )))
            self.blocks.append(self.child(ChannelMixingBlock(
                store, f"{prefix}.{i}.channel", init, channels, cfg.channel_ratio
            )))

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = _named(block.prefix, block, x)
        return x

    def macs(self, shape: Shape) -> int:
        return sum(block.macs(shape) for block in self.blocks)


def _named(name: str, fn, *args) -> Tensor:
    """Run ``fn`` and re-raise a NumericError tagged with the layer name."""
    try:
        return fn(*args)
    except NumericError as e:
        raise NumericError(f"layer '{name}': {e}") from e


class StripMLP(Module):
    """Patch embed, four stages with merges and two skip convs, GAP, head."""

    def __init__(self, store: ParamStore, init: Initializer, cfg: ModelConfig) -> None:
        super().__init__(store, "model", init)
        self.cfg = cfg
        block_cfg = cfg.block_config()
        c = cfg.channels
        self.embed = self.child(PatchEmbed(store, "embed", init, cfg.patch_size, c, cfg.in_channels))
        self.stages: List[Stage] = []
        self.merges: List[PatchMerge] = []
        for s in range(NUM_STAGES):
            self.stages.append(self.child(Stage(
                store, f"stage{s + 1}", init, cfg.stage_channels(s), cfg.stage_resolution(s),
                cfg.depths[s], block_cfg,
            )))
            if s < NUM_STAGES - 1:
                self.merges.append(self.child(PatchMerge(
                    store, f"merge{s + 1}", init, cfg.stage_channels(s)
                )))
        skip = dict(kernel=SKIP_STRIDE, stride=SKIP_STRIDE)
        self.skip1 = self.child(Conv2d(store, "skip1", init, ConvSpec(c, 4 * c, **skip)))
        self.skip2 = self.child(Conv2d(store, "skip2", init, ConvSpec(2 * c, 8 * c, **skip)))
        self.head = self.child(Linear(store, "head", init, cfg.stage_channels(3), cfg.num_classes))

    def check_input(self, img: Tensor) -> None:
        cfg = self.cfg
        expected = (cfg.in_channels, cfg.resolution, cfg.resolution)
        if img.ndim != 4 or tuple(img.shape[1:]) != expected:
            raise ConfigError(f"model expects input (N, {', '.join(map(str, expected))}), got {img.shape}")

    def features(self, img: Tensor) -> Tensor:
        """Stage-4 feature map of shape (N, 8C, H/8p, W/8p)."""
        self.check_input(img)
        x = _named("embed", self.embed, img)
        x = self.stages[0](x)
        s1 = x
        x = _named("merge1", self.merges[0], x)
        x = self.stages[1](x)
        s2 = x
        x = _named("merge2", self.merges[1], x) + _named("skip1", self.skip1, s1)
        x = self.stages[2](x)
        x = _named("merge3", self.merges[2], x) + _named("skip2", self.skip2, s2)
        return self.stages[3](x)

    def forward(self, img: Tensor) -> Tensor:
        pooled = _named("pool", ops.global_avg_pool, self.features(img))
        return _named("head", self.head, pooled)

    def stage_modules(self) -> List[Tuple[str, List[Module], Shape]]:
        """(label, modules, input shape) per reporting scope, in forward order."""
        cfg = self.cfg
        shapes = [(cfg.stage_channels(s), cfg.stage_resolution(s), cfg.stage_resolution(s))
                  for s in range(NUM_STAGES)]
        img = (cfg.in_channels, cfg.resolution, cfg.resolution)
        scopes = [("embed", [self.embed], img)]
        for s in range(NUM_STAGES):
            scopes.append((f"stage{s + 1}", [self.stages[s]], shapes[s]))
            if s < NUM_STAGES - 1:
                scopes.append((f"merge{s + 1}", [self.merges[s]], shapes[s]))
        scopes.append(("skip1", [self.skip1], shapes[0]))
        scopes.append(("skip2", [self.skip2], shapes[1]))
        scopes.append(("head", [self.head], (cfg.stage_channels(3),)))
        return scopes

    def macs(self, shape: Optional[Shape] = None) -> int:
        return sum(m.macs(s) for _, modules, s in self.stage_modules() for m in modules)


def build_model(cfg: ModelConfig, seed: Optional[int] = 0) -> Tuple[StripMLP, ParamStore]:
    """Build a model and its parameters.

    Weights are truncated-normal (std 0.02, cut at ±2 std), biases zero, BN
    gamma 1 / beta 0. ``seed=None`` builds a shape-only model whose tensors
    are zero-stride placeholders, for cost analysis.

    Raises:
        ConfigError: On divisibility violations anywhere in the network.
    """
    store = ParamStore()
    model = StripMLP(store, Initializer(seed), cfg)
    weights, biases = store.counts()
    logger.info(
        f"built {cfg.variant} model: {weights + biases:,} parameters "
        f"({weights:,} weights, {biases:,} biases, {len(store)} tensors)"
    )
    return model, store


def model_forward(model: StripMLP, batch: Tensor) -> Tensor:
    """Logits of shape (N, num_classes).

    Raises:
        ConfigError: If the batch resolution does not match the model.
        NumericError: If any layer produces a non-finite value; the message
            names the layer.
    """
    if not isinstance(batch, Tensor):
        batch = Tensor(np.asarray(batch))
    return model(batch)
