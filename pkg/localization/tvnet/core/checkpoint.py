"""
TVNet - Checkpoint Files

Layout: b"TVNC", u32 version, then one record per array:
u32 name length, UTF-8 name, u64 rank, rank x u64 dims, float64 LE values.
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from tvnet.core.errors import CheckpointError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TVNC"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: Union[str, Path], arrays: Mapping[str, np.ndarray]) -> Path:
    """
    Write named arrays to a checkpoint file

    Args:
        path: Destination file
        arrays: Arrays keyed by name; order is preserved

    Returns:
        Path: The written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    for name, values in arrays.items():
        values = np.asarray(values, dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<Q", values.ndim))
        chunks.append(struct.pack(f"<{values.ndim}Q", *values.shape))
        chunks.append(values.astype("<f8").tobytes(order="C"))
    path.write_bytes(b"".join(chunks))
    logger.info(f"Wrote checkpoint {path} ({len(arrays)} arrays)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """
    Read a checkpoint file

    Raises:
        CheckpointError: On a bad magic, unknown version or truncated record
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    if len(blob) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")

    arrays: Dict[str, np.ndarray] = {}
    offset = 8
    try:
        while offset < len(blob):
            (name_length,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_length].decode("utf-8")
            offset += name_length
            (rank,) = struct.unpack_from("<Q", blob, offset)
            offset += 8
            shape = struct.unpack_from(f"<{rank}Q", blob, offset)
            offset += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            end = offset + 8 * count
            if end > len(blob):
                raise CheckpointError(f"{path}: record '{name}' is truncated")
            arrays[name] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
            offset = end
    except (struct.error, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt record at byte {offset}: {e}") from e
    return arrays
