"""Tensor-core kernels: dense float64 numerics every layer is built from."""

from .kernels import (
    BN_EPS,
    BN_MOMENTUM,
    DTYPE,
    BatchNormResult,
    ConvSpec,
    batch_norm2d,
    concat,
    conv2d,
    gelu,
    global_avg_pool,
    layout,
    linear,
    permute,
    reshape,
    softmax_axis,
    split,
)
from .parallel import set_worker_count, worker_count

__all__ = [
    "BN_EPS",
    "BN_MOMENTUM",
    "DTYPE",
    "BatchNormResult",
    "ConvSpec",
    "batch_norm2d",
    "concat",
    "conv2d",
    "gelu",
    "global_avg_pool",
    "layout",
    "linear",
    "permute",
    "reshape",
    "softmax_axis",
    "split",
    "set_worker_count",
    "worker_count",
]
