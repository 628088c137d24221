"""Central finite differences as an oracle for :func:`backward`."""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import NumericError, UsageError
from .engine import Tensor, backward, no_grad

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-5


@dataclass
class GradCheckResult:
    """Outcome of one finite-difference comparison."""

    max_error: float
    coords_checked: int
    finite: bool = True
    worst_index: Optional[tuple] = None

    def passed(self, tolerance: float) -> bool:
        return self.finite and self.max_error <= tolerance


def _evaluate(f: Callable[[], Tensor]) -> float:
    with no_grad():
        value = f()
    if value.size != 1:
        raise UsageError(f"gradcheck needs a scalar function, got shape {value.shape}")
    return value.item()


def finite_diff_check(
    f: Callable[[], Tensor],
    x: Tensor,
    eps: float = DEFAULT_EPS,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    wrt: Sequence[Tensor] = (),
) -> GradCheckResult:
    """Compare ``backward`` against central differences of ``f`` at ``x``.

    ``f`` is a closure that reads ``x.data`` (and any other leaves) and
    returns a scalar tensor. Every coordinate of ``x`` is perturbed in turn
    unless ``max_coords`` caps the count, in which case a random subset is
    drawn from ``rng``.

    The relative error of a coordinate is ``|g_fd - g_ad| / max(1, |g_ad|)``.

    Args:
        f: Scalar-valued closure.
        x: Leaf tensor to differentiate with respect to.
        eps: Perturbation size.
        max_coords: Optional cap on the number of coordinates checked.
        rng: Generator used to sample coordinates when capped.
        wrt: Extra leaves that must receive gradients (unused ones get zeros).

    Returns:
        The worst relative error and where it occurred. A non-finite
        evaluation of ``f`` is reported as a failed result, not raised.
    """
    if eps <= 0:
        raise UsageError(f"eps must be positive, got {eps}")
    if not x.requires_grad:
        raise UsageError("finite_diff_check: x must require gradients")

    try:
        loss = f()
        analytic = backward(loss, inputs=(x, *wrt))[id(x)]
    except NumericError as e:
        logger.debug(f"non-finite function value: {e}")
        return GradCheckResult(max_error=float("inf"), coords_checked=0, finite=False)

    flat_count = x.size
    if max_coords is not None and max_coords < flat_count:
        rng = rng if rng is not None else np.random.default_rng(0)
        coords = np.sort(rng.choice(flat_count, size=max_coords, replace=False))
    else:
        coords = np.arange(flat_count)

    original = x.data
    worst = 0.0
    worst_index = None
    try:
        for flat in coords:
            index = np.unravel_index(int(flat), x.shape)
            plus = original.copy()
            plus[index] += eps
            minus = original.copy()
            minus[index] -= eps
            try:
                x.data = plus
                f_plus = _evaluate(f)
                x.data = minus
                f_minus = _evaluate(f)
            except NumericError as e:
                logger.debug(f"non-finite function value at {index}: {e}")
                return GradCheckResult(float("inf"), len(coords), finite=False, worst_index=index)
            numeric = (f_plus - f_minus) / (2.0 * eps)
            grad = float(analytic[index])
            error = abs(numeric - grad) / max(1.0, abs(grad))
            if not np.isfinite(error):
                return GradCheckResult(float("inf"), len(coords), finite=False, worst_index=index)
            if error > worst:
                worst, worst_index = error, tuple(int(i) for i in index)
    finally:
        x.data = original

    return GradCheckResult(max_error=worst, coords_checked=len(coords), worst_index=worst_index)
