"""Light augmentation: padded random crop and horizontal flip."""

from typing import Optional, Tuple

import numpy as np

from ..errors import ConfigError, DimensionError

NONE = "none"
BASIC = "basic"
POLICIES = (NONE, BASIC)

CROP_PADDING = 4
FLIP_PROB = 0.5


def hflip(image: np.ndarray) -> np.ndarray:
    return image[..., ::-1].copy()


def crop(image: np.ndarray, dy: int, dx: int, padding: int = CROP_PADDING) -> np.ndarray:
    """Zero-pad by ``padding`` and cut the original size at offset (dy, dx).

    Offsets are relative to the unpadded image, each in ``[-padding, padding]``.
    """
    if max(abs(dy), abs(dx)) > padding:
        raise ConfigError(f"crop offset ({dy}, {dx}) exceeds padding {padding}")
    _, h, w = image.shape
    padded = np.pad(image, ((0, 0), (padding, padding), (padding, padding)))
    return padded[:, padding + dy:padding + dy + h, padding + dx:padding + dx + w].copy()


def augment(
    image: np.ndarray,
    rng: np.random.Generator,
    policy: str = BASIC,
    flip_prob: float = FLIP_PROB,
    offset: Optional[Tuple[int, int]] = None,
) -> np.ndarray:
    """Augment one (C, H, W) image.

    ``none`` returns the input unchanged. ``basic`` applies a pad-4 random
    crop then a horizontal flip with probability ``flip_prob``. Padding is
    zero in normalized space, i.e. the channel mean.

    Args:
        image: Normalized image.
        rng: Source of the crop offset and flip decision.
        policy: ``none`` or ``basic``.
        flip_prob: Flip probability.
        offset: Fixed crop offset instead of a random one.
    """
    if policy not in POLICIES:
        raise ConfigError(f"unknown augmentation policy '{policy}', expected one of {', '.join(POLICIES)}")
    if image.ndim != 3:
        raise DimensionError(f"augment expects a (C, H, W) image, got {image.shape}")
    if policy == NONE:
        return image
    if offset is None:
        dy, dx = (int(v) for v in rng.integers(-CROP_PADDING, CROP_PADDING + 1, size=2))
    else:
        dy, dx = offset
    out = crop(image, dy, dx)
    if rng.random() < flip_prob:
        out = hflip(out)
    return out


def augment_batch(images: np.ndarray, rng: np.random.Generator, policy: str = BASIC) -> np.ndarray:
    if policy == NONE:
        return images
    return np.stack([augment(img, rng, policy) for img in images])
