"""Linear warmup followed by cosine decay."""

import math
from dataclasses import dataclass

from ..errors import ConfigError, UsageError


@dataclass(frozen=True)
class Schedule:
    base_lr: float = 1e-3
    warmup_epochs: int = 30
    total_epochs: int = 300
    min_lr: float = 1e-5
    warmup_start_lr: float = 1e-6

    def __post_init__(self) -> None:
        if self.total_epochs < 1 or not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigError(
                f"need 0 <= warmup_epochs < total_epochs, got {self.warmup_epochs}, {self.total_epochs}"
            )
        if min(self.base_lr, self.min_lr, self.warmup_start_lr) < 0:
            raise ConfigError("learning rates must be non-negative")


def lr_at(schedule: Schedule, step: int, steps_per_epoch: int) -> float:
    """Learning rate of optimizer step ``step`` (0-based).

    Warmup runs linearly from ``warmup_start_lr`` at step 0 to ``base_lr`` at
    the first post-warmup step; the cosine then reaches ``min_lr`` exactly at
    the final step ``total_epochs * steps_per_epoch - 1``, which wins over the
    warmup boundary when the cosine phase is a single step.
    """
    if step < 0:
        raise UsageError(f"step must be >= 0, got {step}")
    if steps_per_epoch < 1:
        raise UsageError(f"steps_per_epoch must be >= 1, got {steps_per_epoch}")
    warmup = schedule.warmup_epochs * steps_per_epoch
    total = schedule.total_epochs * steps_per_epoch
    if step < warmup:
        return schedule.warmup_start_lr + (schedule.base_lr - schedule.warmup_start_lr) * step / warmup
    if step >= total - 1:
        return schedule.min_lr
    progress = (step - warmup) / (total - 1 - warmup)
    return schedule.min_lr + (schedule.base_lr - schedule.min_lr) * (1.0 + math.cos(math.pi * progress)) / 2.0
