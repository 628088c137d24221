"""Run configuration: a strict, JSON-serializable tree of dataclasses."""

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, TypeVar, Union

from .data.augment import POLICIES
from .data.cifar import CIFAR10_MEAN, CIFAR10_STD
from .data.loader import CIFAR10, SOURCES, SYNTHETIC
from .errors import ConfigError
from .models.zoo import VARIANTS, ModelConfig, variant_config
from .tensor.parallel import THREADS_ENV_VAR, set_worker_count, worker_count
from .training.schedule import Schedule

logger = logging.getLogger(__name__)

CONFIG_FILENAME = "config.json"

T = TypeVar("T")


@dataclass(frozen=True)
class OptimConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    label_smoothing: float = 0.1
    grad_clip: Optional[float] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive when set, got {self.grad_clip}")


@dataclass(frozen=True)
class DataConfig:
    """Where the data comes from and how it is batched.

    ``root`` (the directory holding ``cifar-10-batches-bin``) is the one
    setting without a usable default; it is required for ``cifar10``.
    """

    source: str = SYNTHETIC
    root: Optional[str] = None
    synthetic_size: int = 64
    train_subset: Optional[int] = None
    test_subset: Optional[int] = None
    batch_size: int = 32
    augment: str = "none"
    prefetch: bool = False
    mean: Tuple[float, float, float] = CIFAR10_MEAN
    std: Tuple[float, float, float] = CIFAR10_STD

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "std", tuple(float(v) for v in self.std))
        if self.source not in SOURCES:
            raise ConfigError(f"data.source must be one of {', '.join(SOURCES)}, got '{self.source}'")
        if self.source == CIFAR10 and not self.root:
            raise ConfigError("data.root is required for the cifar10 source")
        if self.augment not in POLICIES:
            raise ConfigError(f"data.augment must be one of {', '.join(POLICIES)}, got '{self.augment}'")
        if self.batch_size < 1 or self.synthetic_size < 1:
            raise ConfigError("data.batch_size and data.synthetic_size must be >= 1")
        if len(self.mean) != 3 or len(self.std) != 3 or min(self.std) <= 0:
            raise ConfigError("data.mean and data.std need three values, std positive")


@dataclass(frozen=True)
class RunConfig:
    """Everything a train or eval command needs."""

    model: ModelConfig = field(default_factory=lambda: VARIANTS["tiny"])
    schedule: Schedule = field(default_factory=lambda: Schedule(warmup_epochs=2, total_epochs=20))
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    threads: Optional[int] = None
    deterministic: bool = True
    run_dir: str = "runs/default"
    checkpoint_every: int = 1
    eval_every: int = 1
    max_steps: Optional[int] = None

    def __post_init__(self) -> None:
        if self.checkpoint_every < 0 or self.eval_every < 0:
            raise ConfigError("checkpoint_every and eval_every must be >= 0 (0 disables)")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1 when set, got {self.max_steps}")
        if self.threads is not None and self.threads < 0:
            raise ConfigError(f"threads must be >= 0, got {self.threads}")

    def to_dict(self) -> Dict[str, Any]:
        return _to_plain(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """Build a config from plain data, rejecting unknown keys at every level.

        ``model.variant`` naming a preset starts from that preset; the other
        ``model`` keys override its fields.
        """
        data = dict(_expect_mapping(data, "config"))
        sections = {
            "schedule": Schedule,
            "optim": OptimConfig,
            "data": DataConfig,
        }
        for key, section_cls in sections.items():
            if key in data:
                data[key] = _build(section_cls, data[key], key)
        if "model" in data:
            data["model"] = _build_model(data["model"])
        return _build(cls, data, "config")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def apply_threads(self) -> int:
        """Install the worker cap and return it.

        Deterministic mode forces serial execution; otherwise
        STRIP_MLP_THREADS, when set, takes precedence over ``threads``.
        """
        if self.deterministic:
            set_worker_count(0)
        elif os.environ.get(THREADS_ENV_VAR):
            set_worker_count(None)
        else:
            set_worker_count(self.threads or 0)
        return worker_count()


def _to_plain(value: Any) -> Any:
    if dataclasses.is_dataclass(value):
        return {f.name: _to_plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (tuple, list)):
        return [_to_plain(v) for v in value]
    return value


def _expect_mapping(data: Any, where: str) -> Dict[str, Any]:
    if not isinstance(data, dict):
        raise ConfigError(f"'{where}' must be an object, got {type(data).__name__}")
    return data


def _build(cls: Type[T], data: Any, where: str) -> T:
    data = _expect_mapping(data, where)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{where}': {', '.join(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"invalid '{where}': {e}")


def _build_model(data: Any) -> ModelConfig:
    data = dict(_expect_mapping(data, "model"))
    variant = data.get("variant")
    if variant in VARIANTS:
        names = {f.name for f in dataclasses.fields(ModelConfig)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown key(s) in 'model': {', '.join(unknown)}")
        data.pop("variant")
        overrides = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return variant_config(variant, **overrides)
    return _build(ModelConfig, data, "model")


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read a RunConfig from a JSON file.

    Raises:
        ConfigError: On unreadable JSON, unknown keys or invalid values.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")
    config = RunConfig.from_dict(data)
    logger.debug(f"loaded config from {path}")
    return config


def save_config(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2)
    return path
