"""Exception hierarchy for strip-mlp.

Every error derives from ``ValueError`` through ``StripMLPError`` so callers
that only care about "bad input" can keep catching ``ValueError``.
"""

from typing import Optional


class StripMLPError(ValueError):
    """Base class for all strip-mlp errors."""


class DimensionError(StripMLPError):
    """Tensor shapes do not agree."""


class ConfigError(StripMLPError):
    """A configuration value or combination of values is invalid."""


class NumericError(StripMLPError):
    """A computation produced NaN or Inf."""


class UsageError(StripMLPError):
    """An API was called in a way it does not support."""


class DataError(StripMLPError):
    """Dataset content is well-formed but semantically invalid."""


class IngestionError(StripMLPError):
    """Dataset bytes could not be decoded."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointError(StripMLPError):
    """A checkpoint file is corrupt or does not fit the model."""


class TrainingError(StripMLPError):
    """Training had to be aborted."""

    def __init__(self, message: str, step: Optional[int] = None, lr: Optional[float] = None) -> None:
        super().__init__(message)
        self.step = step
        self.lr = lr


class DownloadError(StripMLPError):
    """A dataset download failed."""
