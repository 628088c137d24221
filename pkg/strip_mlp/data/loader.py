"""Mini-batch iteration with per-epoch shuffling and optional prefetch."""

import logging
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, List, Optional

import numpy as np

from ..errors import ConfigError, DimensionError
from .augment import NONE, augment_batch
from .cifar import Dataset

logger = logging.getLogger(__name__)

SYNTHETIC = "synthetic"
CIFAR10 = "cifar10"
SOURCES = (SYNTHETIC, CIFAR10)


@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.images.shape[0] != self.labels.shape[0]:
            raise DimensionError(f"batch has {self.images.shape[0]} images but {self.labels.shape[0]} labels")

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def epoch_order(n: int, seed: int, epoch: int, shuffle: bool = True) -> np.ndarray:
    """Permutation of ``range(n)`` for one epoch, a pure function of (seed, epoch)."""
    if not shuffle:
        return np.arange(n)
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_iter(
    dataset: Dataset,
    batch_size: int,
    seed: int = 0,
    epoch: int = 0,
    shuffle: bool = True,
    augment: str = NONE,
    prefetch: bool = False,
    resolution: Optional[int] = None,
) -> Iterator[Batch]:
    """Yield the batches of one epoch; the last partial batch is kept.

    Args:
        dataset: Source dataset (not modified).
        batch_size: Samples per batch, at least 1.
        seed: Run seed; together with ``epoch`` fixes the order and the
            augmentation draws.
        epoch: Epoch index.
        shuffle: Permute the dataset; otherwise keep its order.
        augment: Augmentation policy applied per sample.
        prefetch: Build the next batch on a background thread while the
            current one is consumed. Batches still arrive in order and are
            identical to the serial ones.
        resolution: Upsample images to this size (an integer multiple of
            the stored size) after augmentation.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = epoch_order(len(dataset), seed, epoch, shuffle)
    rng = np.random.default_rng([seed, epoch, 1])
    slices: List[np.ndarray] = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]

    def build(indices: np.ndarray) -> Batch:
        images = augment_batch(dataset.images[indices], rng, augment)
        if resolution is not None:
            images = upsample(images, resolution)
        return Batch(images, dataset.labels[indices])

    if not prefetch:
        for indices in slices:
            yield build(indices)
        return

    with ThreadPoolExecutor(max_workers=1) as pool:
        pending: Optional[Future] = pool.submit(build, slices[0]) if slices else None
        for i in range(len(slices)):
            batch = pending.result()
            pending = pool.submit(build, slices[i + 1]) if i + 1 < len(slices) else None
            yield batch


def upsample(images: np.ndarray, resolution: int) -> np.ndarray:
    """Nearest-neighbour upsampling of (N, C, H, W) images to an integer multiple of H."""
    size = images.shape[-1]
    if resolution == size:
        return images
    if resolution % size or images.shape[-2] != size:
        raise ConfigError(f"cannot upsample {images.shape[-2]}x{size} images to {resolution}x{resolution}")
    factor = resolution // size
    return images.repeat(factor, axis=2).repeat(factor, axis=3)


def num_batches(n: int, batch_size: int) -> int:
    return -(-n // batch_size)
