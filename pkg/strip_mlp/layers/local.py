"""Local strip mixing: small 3x7 / 7x3 strip units merged by a re-weight."""

import logging
from typing import List, Sequence

from ..autograd import Tensor, ops
from ..errors import DimensionError
from .base import Initializer, Module, ParamStore, Shape, check_nchw
from .basic import Linear, depthwise

logger = logging.getLogger(__name__)

STRIP_WIDTH = 3
STRIP_LENGTH = 7
REWEIGHT_REDUCTION = 4


class Reweight(Module):
    """Data-dependent convex combination of equally shaped branches.

    ``a = softmax(fc2(gelu(fc1(GAP(sum(branches)))))`` laid out as
    (N, C, branches) with the softmax over the last axis; the output is
    ``sum_b a[..., b] * branch_b``.
    """

    def __init__(
        self,
        store: ParamStore,
        prefix: str,
        init: Initializer,
        channels: int,
        branches: int = 2,
        reduction: int = REWEIGHT_REDUCTION,
    ) -> None:
        super().__init__(store, prefix, init)
        if branches < 2:
            raise DimensionError(f"re-weight needs at least 2 branches, got {branches}")
        self.channels = channels
        self.branches = branches
        self.hidden = max(1, channels // reduction)
        self.fc1 = self.child(Linear(store, f"{prefix}.fc1", init, channels, self.hidden))
        self.fc2 = self.child(Linear(store, f"{prefix}.fc2", init, self.hidden, branches * channels))

    def weights(self, branches: Sequence[Tensor]) -> Tensor:
        """Branch weights of shape (N, C, branches); they sum to 1 on the last axis."""
        if len(branches) != self.branches:
            raise DimensionError(f"{self.prefix}: expected {self.branches} branches, got {len(branches)}")
        reference = branches[0].shape
        for branch in branches:
            if branch.shape != reference:
                raise DimensionError(
                    f"{self.prefix}: branch shapes {[b.shape for b in branches]} differ"
                )
        check_nchw(branches[0], self.channels, self.prefix)
        total = branches[0]
        for branch in branches[1:]:
            total = total + branch
        hidden = ops.gelu(self.fc1(ops.global_avg_pool(total)))
        logits = ops.reshape(self.fc2(hidden), (reference[0], self.channels, self.branches))
        return ops.softmax(logits, axis=-1)

    def forward(self, branches: Sequence[Tensor]) -> Tensor:
        n = branches[0].shape[0]
        a = self.weights(branches)
        out = None
        for a_b, branch in zip(ops.split(a, [1] * self.branches, axis=2), branches):
            term = ops.reshape(a_b, (n, self.channels, 1, 1)) * branch
            out = term if out is None else out + term
        return out

    def macs(self, shape: Shape) -> int:
        return self.fc1.macs((self.channels,)) + self.fc2.macs((self.hidden,))


class LSMM(Module):
    """Local strip mixing module.

    A row unit (depth-wise 3x7 window) and a column unit (depth-wise 7x3
    window), zero padded to preserve the shape, combined by :class:`Reweight`.
    """

    def __init__(self, store: ParamStore, prefix: str, init: Initializer, channels: int) -> None:
        super().__init__(store, prefix, init)
        self.channels = channels
        half_w, half_l = STRIP_WIDTH // 2, STRIP_LENGTH // 2
        self.row = self.child(depthwise(
            store, f"{prefix}.row", init, channels, (STRIP_WIDTH, STRIP_LENGTH), (half_w, half_l)
        ))
        self.column = self.child(depthwise(
            store, f"{prefix}.column", init, channels, (STRIP_LENGTH, STRIP_WIDTH), (half_l, half_w)
        ))
        self.reweight = self.child(Reweight(store, f"{prefix}.reweight", init, channels))

    def branches(self, x: Tensor) -> List[Tensor]:
        check_nchw(x, self.channels, self.prefix)
        return [self.row(x), self.column(x)]

    def forward(self, x: Tensor) -> Tensor:
        return self.reweight(self.branches(x))

    def macs(self, shape: Shape) -> int:
        return self.row.macs(shape) + self.column.macs(shape) + self.reweight.macs(shape)
