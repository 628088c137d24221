"""AdamW with decoupled weight decay."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from ..errors import CheckpointError, ConfigError, DimensionError
from ..layers import ParamStore
from ..tensor.kernels import DTYPE

logger = logging.getLogger(__name__)

OPTIM_PREFIX = "optim"


@dataclass
class OptimState:
    """Moments, step counter and hyper-parameters of an AdamW run."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"betas must be in [0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0 or self.weight_decay < 0 or self.lr < 0:
            raise ConfigError("eps must be positive, lr and weight_decay non-negative")

    def arrays(self) -> Dict[str, np.ndarray]:
        """Flat name -> array view used by the checkpoint container."""
        out: Dict[str, np.ndarray] = {}
        for name in self.m:
            out[f"{OPTIM_PREFIX}.m.{name}"] = self.m[name]
            out[f"{OPTIM_PREFIX}.v.{name}"] = self.v[name]
        out[f"{OPTIM_PREFIX}.step"] = np.asarray(float(self.step), dtype=DTYPE)
        return out

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        step_key = f"{OPTIM_PREFIX}.step"
        if step_key not in arrays:
            raise CheckpointError(f"checkpoint has no '{step_key}' entry")
        m: Dict[str, np.ndarray] = {}
        v: Dict[str, np.ndarray] = {}
        for key, value in arrays.items():
            if key.startswith(f"{OPTIM_PREFIX}.m."):
                m[key[len(OPTIM_PREFIX) + 3:]] = np.array(value, dtype=DTYPE)
            elif key.startswith(f"{OPTIM_PREFIX}.v."):
                v[key[len(OPTIM_PREFIX) + 3:]] = np.array(value, dtype=DTYPE)
        if m.keys() != v.keys():
            raise CheckpointError("optimizer first and second moments cover different tensors")
        self.m, self.v = m, v
        self.step = int(np.asarray(arrays[step_key]).reshape(()))


def adamw_step(
    store: ParamStore,
    grads: Mapping[str, np.ndarray],
    state: OptimState,
    lr: Optional[float] = None,
) -> None:
    """One AdamW update of every trainable tensor in ``store``.

    Decay-eligible tensors are first scaled by ``1 - lr * weight_decay``;
    then ``theta -= lr * m_hat / (sqrt(v_hat) + eps)`` with bias-corrected
    moments. A tensor missing from ``grads`` is updated with a zero gradient.
    Tensor values are replaced, never modified in place.

    Args:
        store: Parameters; only trainable entries are touched.
        grads: Gradients by parameter name.
        state: Optimizer state, advanced by one step.
        lr: Learning rate for this step (defaults to ``state.lr``).
    """
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for entry in store.trainable():
        theta = entry.tensor.data
        grad = grads.get(entry.name)
        if grad is None:
            grad = np.zeros_like(theta)
        elif grad.shape != theta.shape:
            raise DimensionError(f"gradient for '{entry.name}' has shape {grad.shape}, tensor {theta.shape}")
        m = state.m.get(entry.name)
        v = state.v.get(entry.name)
        if m is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[entry.name] = m
        state.v[entry.name] = v

        if entry.decay and state.weight_decay:
            theta = theta * (1.0 - lr * state.weight_decay)
        update = (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        entry.tensor.data = theta - lr * update
