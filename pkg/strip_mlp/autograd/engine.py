"""Tape-style reverse-mode differentiation.

A :class:`Tensor` is a graph node: it owns a float64 value and, when it was
produced by a differentiable op on inputs that require gradients, references
to those inputs plus a backward rule. The graph is rebuilt on every forward
pass and discarded after :func:`backward`.
"""

import contextlib
import logging
import threading
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import UsageError
from ..tensor.kernels import DTYPE

logger = logging.getLogger(__name__)

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run the enclosed block without recording a graph (this thread only)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:
    """A float64 array participating in the autograd graph.

    Values are treated as immutable: ops always allocate new arrays, and the
    optimizer replaces ``data`` wholesale between steps.
    """

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        parents: Sequence["Tensor"] = (),
        backward_rule: Optional[BackwardRule] = None,
        op: str = "",
    ) -> None:
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self.op = op
        self._parents: Tuple["Tensor", ...] = tuple(parents)
        self._backward = backward_rule

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the rules live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


def make_node(
    value: np.ndarray,
    parents: Sequence[Tensor],
    backward_rule: BackwardRule,
    op: str,
) -> Tensor:
    """Wrap an op result, recording the graph edge only when needed."""
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(value, op=op)
    return Tensor(value, requires_grad=True, parents=parents, backward_rule=backward_rule, op=op)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, inputs: Sequence[Tensor] = ()) -> Dict[int, np.ndarray]:
    """Back-propagate from a scalar loss.

    Gradients reaching a node along several paths are summed. Every leaf that
    requires gradients gets its ``grad`` attribute set; leaves listed in
    ``inputs`` that the loss does not depend on receive zeros.

    Args:
        loss: Single-element tensor.
        inputs: Leaves that must appear in the result even if unreachable.

    Returns:
        Mapping from ``id(leaf)`` to its gradient array.

    Raises:
        UsageError: If ``loss`` is not a scalar.
    """
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    result: Dict[int, np.ndarray] = {}
    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = grad
                result[id(node)] = grad
            continue
        parent_grads = node._backward(grad)
        for parent, parent_grad in zip(node._parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            if parent_grad.shape != parent.data.shape:
                raise UsageError(
                    f"backward rule of '{node.op}' returned gradient {parent_grad.shape} "
                    f"for input of shape {parent.data.shape}"
                )
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + parent_grad
            else:
                grads[key] = parent_grad

    for leaf in inputs:
        if id(leaf) not in result:
            zero = np.zeros_like(leaf.data)
            leaf.grad = zero
            result[id(leaf)] = zero
    return result
