"""CIFAR-10 binary record codec and per-channel normalization.

Each record is 3073 bytes: one label byte, then 1024 red, 1024 green and
1024 blue pixel bytes, each plane in row-major order.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from ..errors import DataError, DimensionError, IngestionError
from ..tensor.kernels import DTYPE

logger = logging.getLogger(__name__)

IMAGE_SIZE = 32
CHANNELS = 3
PIXELS = CHANNELS * IMAGE_SIZE * IMAGE_SIZE
RECORD_BYTES = 1 + PIXELS
NUM_CLASSES = 10

CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2023, 0.1994, 0.2010)

TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)


@dataclass
class Dataset:
    """Normalized images (N, 3, H, W) with integer labels.

    The dataset is treated as immutable after construction; augmentation and
    batching produce new arrays.
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int = NUM_CLASSES
    mean: Tuple[float, ...] = CIFAR10_MEAN
    std: Tuple[float, ...] = CIFAR10_STD
    name: str = field(default="dataset", compare=False)

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=DTYPE)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise DimensionError(
                f"images {self.images.shape} and labels {self.labels.shape} do not describe one batch"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def resolution(self) -> int:
        return int(self.images.shape[-1])

    def subset(self, indices: Union[Sequence[int], np.ndarray, slice]) -> "Dataset":
        return Dataset(
            self.images[indices], self.labels[indices], self.num_classes, self.mean, self.std, self.name
        )


def _channel_stats(mean: Sequence[float], std: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    m = np.asarray(mean, dtype=DTYPE).reshape(1, -1, 1, 1)
    s = np.asarray(std, dtype=DTYPE).reshape(1, -1, 1, 1)
    if np.any(s <= 0):
        raise DataError(f"normalization std must be positive, got {tuple(std)}")
    return m, s


def normalize(pixels: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> np.ndarray:
    """Map values in [0, 1] of shape (N, C, H, W) to ``(x - mean) / std`` per channel."""
    m, s = _channel_stats(mean, std)
    return (np.asarray(pixels, dtype=DTYPE) - m) / s


def denormalize(images: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> np.ndarray:
    m, s = _channel_stats(mean, std)
    return np.asarray(images, dtype=DTYPE) * s + m


def decode_records(
    blob: bytes,
    mean: Sequence[float] = CIFAR10_MEAN,
    std: Sequence[float] = CIFAR10_STD,
    source: str = "<bytes>",
) -> Tuple[np.ndarray, np.ndarray]:
    """Decode a byte string of whole records into (images, labels).

    Raises:
        IngestionError: If the byte count is not a positive multiple of the
            record size; the offset is that of the incomplete record.
        DataError: If a label byte is 10 or more.
    """
    if len(blob) == 0 or len(blob) % RECORD_BYTES:
        offset = len(blob) - len(blob) % RECORD_BYTES
        raise IngestionError(
            f"{source}: {len(blob)} bytes is not a whole number of {RECORD_BYTES}-byte records",
            offset,
        )
    records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= NUM_CLASSES)
    if bad.size:
        i = int(bad[0])
        raise DataError(
            f"{source}: label {labels[i]} at byte offset {i * RECORD_BYTES} is outside [0, {NUM_CLASSES})"
        )
    pixels = records[:, 1:].reshape(-1, CHANNELS, IMAGE_SIZE, IMAGE_SIZE).astype(DTYPE) / 255.0
    return normalize(pixels, mean, std), labels


def load_cifar10_bin(
    paths: Iterable[Union[str, Path]],
    mean: Sequence[float] = CIFAR10_MEAN,
    std: Sequence[float] = CIFAR10_STD,
) -> Dataset:
    """Load and concatenate CIFAR-10 binary batch files.

    Args:
        paths: Files in the 3073-byte record layout.
        mean: Per-channel normalization mean (recorded in the run config).
        std: Per-channel normalization std.

    Returns:
        Dataset with pixels scaled to [0, 1] then normalized.
    """
    images: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    names = []
    for path in paths:
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as e:
            raise IngestionError(f"cannot read {path}: {e}", 0)
        x, y = decode_records(blob, mean, std, source=str(path))
        images.append(x)
        labels.append(y)
        names.append(path.name)
        logger.debug(f"loaded {len(y)} records from {path}")
    if not images:
        raise DataError("no CIFAR files given")
    dataset = Dataset(
        np.concatenate(images), np.concatenate(labels), NUM_CLASSES, tuple(mean), tuple(std), "+".join(names)
    )
    logger.info(f"loaded {len(dataset)} CIFAR-10 images from {len(names)} file(s)")
    return dataset


def cifar10_split(
    root: Union[str, Path],
    split: str = "train",
    mean: Sequence[float] = CIFAR10_MEAN,
    std: Sequence[float] = CIFAR10_STD,
) -> Dataset:
    """Load the train or test split from an extracted ``cifar-10-batches-bin`` directory."""
    root = Path(root)
    if split not in ("train", "test"):
        raise DataError(f"split must be 'train' or 'test', got '{split}'")
    if (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"
    files = TRAIN_FILES if split == "train" else TEST_FILES
    return load_cifar10_bin([root / f for f in files], mean, std)


def serialize_cifar10(dataset: Dataset) -> bytes:
    """Encode a 32x32 RGB dataset back into the binary record layout.

    Pixels are denormalized, scaled to [0, 255] and rounded, so a file that
    was loaded with the same mean/std is reproduced byte for byte.
    """
    if dataset.images.shape[1:] != (CHANNELS, IMAGE_SIZE, IMAGE_SIZE):
        raise DimensionError(f"CIFAR records hold (3, 32, 32) images, got {dataset.images.shape[1:]}")
    if len(dataset) and dataset.labels.max() >= NUM_CLASSES:
        raise DataError(f"labels must be < {NUM_CLASSES} to fit the record layout")
    pixels = denormalize(dataset.images, dataset.mean, dataset.std)
    raw = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8).reshape(len(dataset), PIXELS)
    records = np.empty((len(dataset), RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = dataset.labels.astype(np.uint8)
    records[:, 1:] = raw
    return records.tobytes()


def write_cifar10_bin(dataset: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize_cifar10(dataset))
    logger.info(f"wrote {len(dataset)} records to {path}")
    return path
