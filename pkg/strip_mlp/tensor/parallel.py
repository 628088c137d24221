"""Worker-count control and batch-parallel execution of kernels."""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np

from ..errors import ConfigError

logger = logging.getLogger(__name__)

THREADS_ENV_VAR = "STRIP_MLP_THREADS"

_override: Optional[int] = None


def _parse_threads(value: str) -> int:
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got '{value}'")
    if threads < 0:
        raise ConfigError(f"{THREADS_ENV_VAR} must be >= 0, got {threads}")
    return threads


def set_worker_count(threads: Optional[int]) -> None:
    """Override the worker cap for this process.

    Args:
        threads: Number of worker threads, 0 for deterministic serial
            execution, or None to fall back to the environment variable.
    """
    global _override
    if threads is not None and threads < 0:
        raise ConfigError(f"threads must be >= 0, got {threads}")
    _override = threads


def worker_count() -> int:
    """Return the active worker cap (0 means serial)."""
    if _override is not None:
        return _override
    value = os.environ.get(THREADS_ENV_VAR)
    if not value:
        return 0
    return _parse_threads(value)


def is_deterministic() -> bool:
    return worker_count() <= 1


def map_batch(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    """Apply ``fn`` to chunks of ``x`` along axis 0 and stitch the results.

    Each sample is processed by exactly one worker, so the per-sample
    reduction order does not depend on the worker count.

    Args:
        fn: Kernel mapping a batch chunk to its output chunk.
        x: Batched input.

    Returns:
        ``fn(x)``, computed serially or on a thread pool.
    """
    workers = min(worker_count(), x.shape[0])
    if workers <= 1:
        return fn(x)
    chunks = np.array_split(x, workers, axis=0)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(fn, chunks))
    return np.concatenate(results, axis=0)
