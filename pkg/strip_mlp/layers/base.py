"""Parameter storage, initialization and the module base class."""

import contextlib
import logging
import threading
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import truncnorm

from ..autograd import Tensor
from ..errors import ConfigError, DimensionError
from ..tensor.kernels import DTYPE

logger = logging.getLogger(__name__)

# Parameter roles. Weights and scales count as "weights" in cost reports,
# biases and shifts as "biases"; buffers are state, not parameters.
WEIGHT = "weight"
BIAS = "bias"
SCALE = "scale"
SHIFT = "shift"
BUFFER = "buffer"

ROLES = (WEIGHT, BIAS, SCALE, SHIFT, BUFFER)
WEIGHT_ROLES = (WEIGHT, SCALE)
BIAS_ROLES = (BIAS, SHIFT)

INIT_STD = 0.02

Shape = Tuple[int, ...]


@dataclass
class ParamEntry:
    """One named tensor of a :class:`ParamStore` plus its flags."""

    name: str
    tensor: Tensor
    role: str
    decay: bool
    trainable: bool

    @property
    def shape(self) -> Shape:
        return self.tensor.shape


class ParamStore:
    """Ordered, uniquely named collection of model tensors.

    Iteration order is insertion order, so two builds of the same config
    enumerate their tensors identically. Only tensors with role ``weight``
    are decay-eligible; norm scales/shifts and all biases are exempt.
    """

    def __init__(self) -> None:
        self._entries: Dict[str, ParamEntry] = {}

    def add(self, name: str, array: np.ndarray, role: str) -> Tensor:
        if role not in ROLES:
            raise ConfigError(f"unknown parameter role '{role}'")
        if name in self._entries:
            raise ConfigError(f"duplicate parameter name '{name}'")
        trainable = role != BUFFER
        tensor = Tensor(array, requires_grad=trainable, name=name)
        self._entries[name] = ParamEntry(name, tensor, role, decay=role == WEIGHT, trainable=trainable)
        return tensor

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __getitem__(self, name: str) -> Tensor:
        return self.entry(name).tensor

    def entry(self, name: str) -> ParamEntry:
        try:
            return self._entries[name]
        except KeyError:
            raise ConfigError(f"no parameter named '{name}'")

    def entries(self, prefix: Optional[str] = None) -> List[ParamEntry]:
        if prefix is None:
            return list(self._entries.values())
        return [e for e in self._entries.values() if e.name.startswith(prefix + ".")]

    def trainable(self) -> List[ParamEntry]:
        return [e for e in self._entries.values() if e.trainable]

    def counts(self, prefix: Optional[str] = None) -> Tuple[int, int]:
        """(weights, biases) element counts, enumerated from the entries."""
        weights = biases = 0
        for e in self.entries(prefix):
            if e.role in WEIGHT_ROLES:
                weights += e.tensor.size
            elif e.role in BIAS_ROLES:
                biases += e.tensor.size
        return weights, biases

    def total(self) -> int:
        weights, biases = self.counts()
        return weights + biases

    def state(self) -> Dict[str, np.ndarray]:
        return {name: e.tensor.data for name, e in self._entries.items()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        """Replace tensor values by name; every entry must be present."""
        for name, e in self._entries.items():
            if name not in state:
                raise ConfigError(f"state has no value for '{name}'")
            value = np.asarray(state[name], dtype=DTYPE)
            if value.shape != e.tensor.shape:
                raise DimensionError(
                    f"tensor '{name}' has shape {e.tensor.shape}, state holds {value.shape}"
                )
            e.tensor.data = value.copy()

    def zero_grad(self) -> None:
        for e in self._entries.values():
            e.tensor.grad = None

    @property
    def is_meta(self) -> bool:
        return any(0 in e.tensor.data.strides for e in self._entries.values() if e.tensor.size > 1)


class Initializer:
    """Draws initial parameter values from one seeded generator.

    With ``seed=None`` the initializer is in meta mode: every array is a
    zero-stride placeholder of the right shape, so cost analysis of large
    variants allocates nothing.
    """

    def __init__(self, seed: Optional[int], std: float = INIT_STD) -> None:
        self.meta = seed is None
        self.std = std
        self._rng = None if self.meta else np.random.default_rng(seed)

    def trunc_normal(self, shape: Shape) -> np.ndarray:
        """N(0, std²) truncated at ±2 std."""
        if self.meta:
            return self.zeros(shape)
        return truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=self.std, size=shape, random_state=self._rng)

    def zeros(self, shape: Shape) -> np.ndarray:
        if self.meta:
            return np.broadcast_to(np.zeros((), dtype=DTYPE), shape)
        return np.zeros(shape, dtype=DTYPE)

    def ones(self, shape: Shape) -> np.ndarray:
        if self.meta:
            return np.broadcast_to(np.ones((), dtype=DTYPE), shape)
        return np.ones(shape, dtype=DTYPE)


class Module:
    """A layer owning the parameters under ``prefix`` in a shared store.

    Subclasses implement :meth:`forward`, :meth:`param_counts` (analytic
    weight/bias counts, independent of the store) and :meth:`macs` for a
    per-sample ``(C, H, W)`` input shape.
    """

    def __init__(self, store: ParamStore, prefix: str, init: Initializer) -> None:
        self.store = store
        self.prefix = prefix
        self.init = init
        self.training = True
        self._children: List["Module"] = []

    def param(self, name: str, array: np.ndarray, role: str) -> Tensor:
        return self.store.add(f"{self.prefix}.{name}", array, role)

    def child(self, module: "Module") -> "Module":
        self._children.append(module)
        return module

    def children(self) -> List["Module"]:
        return list(self._children)

    def modules(self) -> Iterator["Module"]:
        yield self
        for c in self._children:
            yield from c.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, x):
        raise NotImplementedError

    def param_counts(self) -> Tuple[int, int]:
        weights = biases = 0
        for c in self._children:
            w, b = c.param_counts()
            weights += w
            biases += b
        return weights, biases

    def output_shape(self, shape: Shape) -> Shape:
        return tuple(shape)

    def macs(self, shape: Shape) -> int:
        raise NotImplementedError

    def entries(self) -> List[ParamEntry]:
        """Store entries owned by this module and its descendants."""
        prefixes = tuple(m.prefix + "." for m in self.modules())
        return [e for e in self.store.entries() if e.name.startswith(prefixes)]

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.prefix})"


_tally_state = threading.local()


@contextlib.contextmanager
def count_bias_adds() -> Iterator[List[int]]:
    """Collect the bias additions reported by leaf layers during macs() calls."""
    previous = getattr(_tally_state, "counts", None)
    counts: List[int] = []
    _tally_state.counts = counts
    try:
        yield counts
    finally:
        _tally_state.counts = previous


def record_bias_adds(count: int) -> None:
    counts = getattr(_tally_state, "counts", None)
    if counts is not None:
        counts.append(count)


def check_nchw(x: Tensor, channels: int, where: str, spatial: Optional[Sequence[int]] = None) -> None:
    """Raise DimensionError unless ``x`` is (N, channels, H, W)."""
    if x.ndim != 4 or x.shape[1] != channels:
        raise DimensionError(f"{where}: expected (N, {channels}, H, W), got {x.shape}")
    if spatial is not None and tuple(x.shape[2:]) != tuple(spatial):
        raise DimensionError(f"{where}: expected spatial size {tuple(spatial)}, got {x.shape[2:]}")
