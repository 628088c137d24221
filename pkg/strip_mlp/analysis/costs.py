"""Parameter and FLOP accounting.

FLOPs here are multiply-accumulate counts (one MAC = one FLOP) of
convolutions, linear maps and strip projections. Bias additions are tallied
separately; activations, normalization and pooling are not counted.
"""

import logging
from typing import Tuple

from ..errors import ConfigError, DimensionError
from ..layers import Module
from ..layers.base import BIAS_ROLES, WEIGHT_ROLES, Shape, count_bias_adds
from ..layers.strip import check_strip_width

logger = logging.getLogger(__name__)


def count_params(module: Module) -> Tuple[int, int]:
    """(weights, biases) of ``module``, enumerated from its ParamStore entries.

    Independent of :meth:`Module.param_counts`, which derives the same
    numbers from layer geometry.
    """
    weights = biases = 0
    for entry in module.entries():
        if entry.role in WEIGHT_ROLES:
            weights += entry.tensor.size
        elif entry.role in BIAS_ROLES:
            biases += entry.tensor.size
    return weights, biases


def _per_sample(input_shape: Shape) -> Tuple[int, Shape]:
    shape = tuple(int(d) for d in input_shape)
    if len(shape) == 4:
        return shape[0], shape[1:]
    if len(shape) in (1, 3):
        return 1, shape
    raise DimensionError(f"expected (C, H, W) or (N, C, H, W), got {shape}")


def count_flops(module: Module, input_shape: Shape) -> int:
    """MACs of one forward pass of ``module`` at ``input_shape``.

    ``input_shape`` is per sample ``(C, H, W)`` or batched ``(N, C, H, W)``.
    """
    n, shape = _per_sample(input_shape)
    return n * module.macs(shape)


def count_flops_detail(module: Module, input_shape: Shape) -> Tuple[int, int]:
    """(MACs, bias additions) of one forward pass."""
    n, shape = _per_sample(input_shape)
    with count_bias_adds() as adds:
        macs = module.macs(shape)
    return n * macs, n * sum(adds)


def _check_dims(*dims: int) -> None:
    if min(dims) < 1:
        raise ConfigError(f"dimensions must be positive, got {dims}")


def strip_interaction(h: int, w: int, c: int, patches: int, strip_width: int = 3) -> Tuple[int, int]:
    """Token-interaction weights and MACs of one row + column group strip pair.

    ``k * P * (H^2 + W^2)`` weights and ``k * C * H * W * (H + W)`` MACs.
    """
    _check_dims(h, w, c, patches)
    check_strip_width(strip_width)
    return strip_width * patches * (h * h + w * w), strip_width * c * h * w * (h + w)


def strip_fusion(h: int, w: int, c: int) -> Tuple[int, int]:
    """Two 2C -> C channel fuses: ``4 C^2`` weights, ``4 H W C^2`` MACs."""
    _check_dims(h, w, c)
    return 4 * c * c, 4 * h * w * c * c


def sparse_interaction(h: int, w: int, c: int) -> Tuple[int, int]:
    """Axial token mixing with one shared matrix per axis: ``W^2 + H^2``, ``C H W (H + W)``."""
    _check_dims(h, w, c)
    return w * w + h * h, c * h * w * (h + w)


def sparse_fusion(h: int, w: int, c: int) -> Tuple[int, int]:
    """One 3C -> C fuse: ``3 C^2`` weights, ``3 H W C^2`` MACs."""
    _check_dims(h, w, c)
    return 3 * c * c, 3 * h * w * c * c


def sparse_mlp_baseline(h: int, w: int, c: int) -> Tuple[int, int, int, int]:
    """(interaction params, interaction flops, fusion params, fusion flops)."""
    return (*sparse_interaction(h, w, c), *sparse_fusion(h, w, c))
