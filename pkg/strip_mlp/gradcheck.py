"""Finite-difference gradient suites, one per layer type.

Each suite builds a small layer with seeded parameters, projects its output
onto a fixed random tensor to get a scalar, and checks the gradient with
respect to the input and to every trainable parameter.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .autograd import DEFAULT_EPS, GradCheckResult, Tensor, finite_diff_check, no_grad, ops
from .errors import ConfigError
from .layers import (
    CGSMM,
    GRN,
    LSMM,
    PGSMM,
    BatchNorm2d,
    BlockConfig,
    ChannelMixingBlock,
    Conv2d,
    GroupStripProjection,
    Initializer,
    Linear,
    ParamStore,
    PatchEmbed,
    PatchMerge,
    Reweight,
    StripLayerConfig,
    StripMixingBlock,
)
from .tensor.kernels import ConvSpec

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-5
MAX_COORDS = 32
SUITE_STD = 0.2

Forward = Callable[[Tensor], Tensor]
Built = Tuple[Forward, Tuple[int, ...]]


@dataclass
class SuiteResult:
    layer: str
    checks: Dict[str, GradCheckResult] = field(default_factory=dict)

    def passed(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return all(r.passed(tolerance) for r in self.checks.values())

    @property
    def max_error(self) -> float:
        return max((r.max_error for r in self.checks.values()), default=0.0)

    def failures(self, tolerance: float = DEFAULT_TOLERANCE) -> List[str]:
        return [name for name, r in self.checks.items() if not r.passed(tolerance)]


def _randomize(store: ParamStore, rng: np.random.Generator) -> None:
    """Give scales and shifts non-trivial values so every path carries gradient."""
    for entry in store.trainable():
        if entry.role in ("scale", "shift", "bias"):
            entry.tensor.data = rng.normal(0.0, 0.5, size=entry.shape)


def _conv(store, init, rng) -> Built:
    layer = Conv2d(store, "conv", init, ConvSpec(3, 4, kernel=3, padding=1, stride=1))
    return layer, (2, 3, 5, 5)


def _grouped_conv(store, init, rng) -> Built:
    layer = Conv2d(store, "gconv", init, ConvSpec(4, 6, kernel=(1, 3), padding=(0, 1), groups=2, stride=(1, 2)))
    return layer, (2, 4, 3, 7)


def _linear(store, init, rng) -> Built:
    layer = Linear(store, "linear", init, 5, 3)
    return layer, (4, 5)


def _batch_norm(store, init, rng) -> Built:
    layer = BatchNorm2d(store, "bn", init, 3)
    return layer, (4, 3, 3, 3)


def _gelu(store, init, rng) -> Built:
    return ops.gelu, (2, 3, 4)


def _softmax(store, init, rng) -> Built:
    return (lambda x: ops.softmax(x, axis=-1)), (3, 5)


def _pool(store, init, rng) -> Built:
    return ops.global_avg_pool, (2, 3, 4, 4)


def _grn(store, init, rng) -> Built:
    layer = GRN(store, "grn", init, 4)
    return layer, (2, 4, 3, 3)


def _strip(axis: str):
    def build(store, init, rng) -> Built:
        cfg = StripLayerConfig(axis, 5, patches=2, strip_width=3)
        layer = GroupStripProjection(store, f"strip_{axis}", init, 4, cfg)
        return layer, (2, 4, 5, 5)
    return build


def _cgsmm(store, init, rng) -> Built:
    layer = CGSMM(store, "cgsmm", init, 4, 4, 5, patches=2)
    return layer, (2, 4, 4, 5)


def _pgsmm(store, init, rng) -> Built:
    layer = PGSMM(store, "pgsmm", init, 4, 4, 5, patches=2)
    return layer, (2, 4, 4, 5)


def _reweight(store, init, rng) -> Built:
    layer = Reweight(store, "reweight", init, 4)
    other = Tensor(rng.normal(size=(2, 4, 3, 3)))
    return (lambda x: layer([x, other])), (2, 4, 3, 3)


def _lsmm(store, init, rng) -> Built:
    layer = LSMM(store, "lsmm", init, 4)
    return layer, (2, 4, 5, 5)


def _strip_block(store, init, rng) -> Built:
    layer = StripMixingBlock(store, "block", init, 8, 8, 8, BlockConfig())
    return layer, (2, 8, 8, 8)


def _channel_block(store, init, rng) -> Built:
    layer = ChannelMixingBlock(store, "channel", init, 8, ratio=3)
    return layer, (2, 8, 4, 4)


def _block_stack(store, init, rng) -> Built:
    strip = StripMixingBlock(store, "stack.strip", init, 8, 8, 8, BlockConfig())
    channel = ChannelMixingBlock(store, "stack.channel", init, 8, ratio=3)
    return (lambda x: channel(strip(x))), (2, 8, 8, 8)


def _patch_embed(store, init, rng) -> Built:
    layer = PatchEmbed(store, "embed", init, 2, 4, in_channels=3)
    return layer, (2, 3, 4, 4)


def _patch_merge(store, init, rng) -> Built:
    layer = PatchMerge(store, "merge", init, 3)
    return layer, (2, 3, 4, 4)


def _cross_entropy(store, init, rng) -> Built:
    labels = rng.integers(0, 5, size=4)
    return (lambda x: ops.cross_entropy(x, labels, 0.1)), (4, 5)


SUITES: Dict[str, Callable[..., Built]] = {
    "conv2d": _conv,
    "grouped_conv": _grouped_conv,
    "linear": _linear,
    "batch_norm": _batch_norm,
    "gelu": _gelu,
    "softmax": _softmax,
    "global_avg_pool": _pool,
    "grn": _grn,
    "strip_row": _strip("row"),
    "strip_column": _strip("column"),
    "cgsmm": _cgsmm,
    "pgsmm": _pgsmm,
    "reweight": _reweight,
    "lsmm": _lsmm,
    "strip_block": _strip_block,
    "channel_block": _channel_block,
    "block_stack": _block_stack,
    "patch_embed": _patch_embed,
    "patch_merge": _patch_merge,
    "cross_entropy": _cross_entropy,
}


def run_suite(
    name: str,
    eps: float = DEFAULT_EPS,
    seed: int = 0,
    max_coords: Optional[int] = MAX_COORDS,
) -> SuiteResult:
    """Check input and parameter gradients of one layer type.

    Raises:
        ConfigError: If ``name`` is not a known suite.
    """
    if name not in SUITES:
        raise ConfigError(f"unknown gradcheck layer '{name}', expected one of {', '.join(SUITES)}")
    rng = np.random.default_rng(seed)
    store = ParamStore()
    forward, shape = SUITES[name](store, Initializer(seed, std=SUITE_STD), rng)
    _randomize(store, rng)
    x = Tensor(rng.normal(size=shape), requires_grad=True, name="input")
    with no_grad():
        out_shape = forward(x).shape
    projection = rng.normal(size=out_shape)

    def f() -> Tensor:
        return ops.sum(forward(x) * projection)

    targets = [("input", x)] + [(e.name, e.tensor) for e in store.trainable()]
    leaves = [t for _, t in targets]
    result = SuiteResult(name)
    for label, tensor in targets:
        result.checks[label] = finite_diff_check(f, tensor, eps, max_coords, rng, wrt=leaves)
    logger.debug(f"gradcheck {name}: max error {result.max_error:.3e} over {len(targets)} tensors")
    return result


def run_all(
    layers: Optional[List[str]] = None,
    eps: float = DEFAULT_EPS,
    seed: int = 0,
) -> List[SuiteResult]:
    return [run_suite(name, eps, seed) for name in (layers or list(SUITES))]
