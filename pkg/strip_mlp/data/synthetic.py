"""Class-conditional Gaussian-blob images for desk-scale overfitting runs."""

import logging
from itertools import combinations

import numpy as np

from ..errors import ConfigError, DataError
from ..tensor.kernels import DTYPE
from .cifar import CHANNELS, CIFAR10_MEAN, CIFAR10_STD, Dataset, normalize

logger = logging.getLogger(__name__)

NOISE_STD = 0.05


def synthetic_dataset(
    n: int,
    classes: int,
    resolution: int = 32,
    seed: int = 0,
    noise: float = NOISE_STD,
) -> Dataset:
    """``n`` images whose class is sample index modulo ``classes``.

    Every class has a random template image in [0.2, 0.8]; a sample is its
    class template plus Gaussian noise, clipped to [0, 1] and quantized to
    1/255 steps so the set survives the CIFAR record layout unchanged. The
    result is normalized with the CIFAR-10 statistics.

    Raises:
        ConfigError: If ``n < classes`` or a size is not positive.
        DataError: If two class templates coincide.
    """
    if classes < 1 or resolution < 1:
        raise ConfigError("classes and resolution must be positive")
    if n < classes:
        raise ConfigError(f"need at least one sample per class, got n={n} < classes={classes}")
    rng = np.random.default_rng(seed)
    templates = rng.uniform(0.2, 0.8, size=(classes, CHANNELS, resolution, resolution))
    gap = min(
        (float(np.linalg.norm(templates[a] - templates[b])) for a, b in combinations(range(classes), 2)),
        default=float("inf"),
    )
    if not gap > 0:
        raise DataError("class templates are not pairwise distinct")

    labels = np.arange(n, dtype=np.int64) % classes
    pixels = templates[labels] + rng.normal(0.0, noise, size=(n, CHANNELS, resolution, resolution))
    pixels = np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(DTYPE) / 255.0
    logger.debug(f"synthetic dataset: {n} images, {classes} classes, min template distance {gap:.3f}")
    return Dataset(
        normalize(pixels, CIFAR10_MEAN, CIFAR10_STD), labels, classes, CIFAR10_MEAN, CIFAR10_STD,
        name=f"synthetic-{n}x{classes}",
    )
