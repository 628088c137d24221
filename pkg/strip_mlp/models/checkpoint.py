"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"SMLP"  u32 version
    u64 entry count
    per entry: u32 name length, UTF-8 name, u32 rank, rank x u64 dims,
               prod(dims) x f64 values
    u32 CRC32 of every byte between the version field and the CRC

Model tensors (BN running statistics included) are stored under their
ParamStore names; optimizer state under ``optim.m.<name>``,
``optim.v.<name>`` and ``optim.step``.
"""

import logging
import struct
import zlib
from pathlib import Path
from typing import TYPE_CHECKING, Dict, Optional, Union

import numpy as np

from ..errors import CheckpointError
from ..layers import ParamStore
from ..tensor.kernels import DTYPE

if TYPE_CHECKING:
    from ..training.optim import OptimState

logger = logging.getLogger(__name__)

MAGIC = b"SMLP"
VERSION = 1

_LE_F64 = np.dtype("<f8")


def encode_container(arrays: Dict[str, np.ndarray]) -> bytes:
    """Serialize named arrays into the container layout."""
    parts = [struct.pack("<Q", len(arrays))]
    for name, array in arrays.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array, dtype=DTYPE)
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=_LE_F64).tobytes())
    payload = b"".join(parts)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    return MAGIC + struct.pack("<I", VERSION) + payload + struct.pack("<I", crc)


def decode_container(blob: bytes) -> Dict[str, np.ndarray]:
    """Parse a container, checking magic, version and CRC.

    Raises:
        CheckpointError: On any framing or integrity problem.
    """
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    payload = blob[8:-4]
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("checkpoint CRC mismatch")

    arrays: Dict[str, np.ndarray] = {}
    try:
        (count,) = struct.unpack_from("<Q", payload, 0)
        offset = 8
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            name = payload[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}Q", payload, offset)
            offset += 8 * rank
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            end = offset + 8 * size
            if end > len(payload):
                raise CheckpointError(f"entry '{name}' runs past the end of the checkpoint")
            data = np.frombuffer(payload[offset:end], dtype=_LE_F64)
            arrays[name] = data.astype(DTYPE).reshape(dims)
            offset = end
    except (struct.error, UnicodeDecodeError) as e:
        raise CheckpointError(f"malformed checkpoint: {e}")
    if offset != len(payload):
        raise CheckpointError(f"{len(payload) - offset} trailing bytes after the last entry")
    return arrays


def save_checkpoint(
    path: Union[str, Path], store: ParamStore, optim: Optional["OptimState"] = None
) -> Path:
    """Write every ParamStore tensor (and optimizer state, if given) to ``path``."""
    arrays = dict(store.state())
    if optim is not None:
        arrays.update(optim.arrays())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_container(arrays))
    logger.info(f"checkpoint written to {path} ({len(arrays)} entries)")
    return path


def load_checkpoint(
    path: Union[str, Path], store: ParamStore, optim: Optional["OptimState"] = None
) -> None:
    """Restore ``store`` (and ``optim``) from ``path``.

    Raises:
        CheckpointError: On a corrupt file, a missing entry, or an entry whose
            shape differs from the model's; the message names the tensor.
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    arrays = decode_container(blob)
    for entry in store.entries():
        if entry.name not in arrays:
            raise CheckpointError(f"checkpoint has no tensor '{entry.name}'")
        if arrays[entry.name].shape != entry.shape:
            raise CheckpointError(
                f"tensor '{entry.name}': checkpoint shape {arrays[entry.name].shape}, model shape {entry.shape}"
            )
    store.load_state(arrays)
    if optim is not None:
        optim.load_arrays(arrays)
    logger.info(f"checkpoint loaded from {path}")
