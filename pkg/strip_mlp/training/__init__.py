"""AdamW, learning-rate schedule, training loop and evaluation."""

from .optim import OptimState, adamw_step
from .schedule import Schedule, lr_at
from .trainer import (
    MetricsLog,
    TrainResult,
    clip_gradients,
    evaluate,
    load_datasets,
    predict,
    top1,
    train,
    train_step,
)

__all__ = [
    "MetricsLog",
    "OptimState",
    "Schedule",
    "TrainResult",
    "adamw_step",
    "clip_gradients",
    "evaluate",
    "load_datasets",
    "lr_at",
    "predict",
    "top1",
    "train",
    "train_step",
]
