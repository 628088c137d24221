"""Datasets: CIFAR-10 binary codec, synthetic blobs, augmentation and batching."""

from .augment import augment, augment_batch, crop, hflip
from .cifar import (
    CIFAR10_MEAN,
    CIFAR10_STD,
    RECORD_BYTES,
    Dataset,
    cifar10_split,
    decode_records,
    denormalize,
    load_cifar10_bin,
    normalize,
    serialize_cifar10,
    write_cifar10_bin,
)
from .download import DatasetDownloader, extract_archive, fetch_cifar10
from .loader import CIFAR10, SOURCES, SYNTHETIC, Batch, batch_iter, epoch_order, num_batches, upsample
from .synthetic import synthetic_dataset

__all__ = [
    "Batch",
    "CIFAR10",
    "SOURCES",
    "SYNTHETIC",
    "CIFAR10_MEAN",
    "CIFAR10_STD",
    "Dataset",
    "DatasetDownloader",
    "RECORD_BYTES",
    "augment",
    "augment_batch",
    "batch_iter",
    "cifar10_split",
    "crop",
    "decode_records",
    "denormalize",
    "epoch_order",
    "extract_archive",
    "fetch_cifar10",
    "hflip",
    "load_cifar10_bin",
    "normalize",
    "num_batches",
    "serialize_cifar10",
    "synthetic_dataset",
    "upsample",
    "write_cifar10_bin",
]
