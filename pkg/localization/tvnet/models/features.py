"""
TVNet - Feature Sequences
"""

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from tvnet.core.errors import FeatureFormatError, ShapeError

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"TVNF"
FEATURE_VERSION = 1
HEADER_SIZE = 16


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def seconds_to_index(seconds: float, frame_rate_ratio: float, T: int) -> int:
    """Feature step holding a time in seconds, clipped to [0, T-1]"""
    return min(max(round_half_up(seconds / frame_rate_ratio), 0), T - 1)


def index_to_seconds(index: Union[int, float], frame_rate_ratio: float) -> float:
    return float(index) * frame_rate_ratio


@dataclass(frozen=True)
class FeatureSequence:
    """
    T x C feature matrix of one video

    Attributes:
        video_id: Video identifier
        data: Read-only (T, C) array
        frame_rate_ratio: Seconds per feature step (duration / T)
    """

    video_id: str
    data: np.ndarray
    frame_rate_ratio: float = 1.0

    def __post_init__(self):
        raw = np.asarray(self.data)
        data = np.array(raw, dtype=np.float32 if raw.dtype == np.float32 else np.float64)
        if data.ndim != 2:
            raise ShapeError(f"Feature data for '{self.video_id}' must be 2-D (T, C), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise FeatureFormatError(f"Features for '{self.video_id}' contain NaN or Inf")
        if self.frame_rate_ratio <= 0:
            raise FeatureFormatError(f"frame_rate_ratio must be positive, got {self.frame_rate_ratio}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def C(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.T * self.frame_rate_ratio

    def with_data(self, data: np.ndarray) -> "FeatureSequence":
        return FeatureSequence(self.video_id, data, self.frame_rate_ratio)


def rescale_sequence(seq: FeatureSequence, target_T: int) -> FeatureSequence:
    """
    Linearly interpolate a sequence onto target_T evenly spaced steps

    Both endpoints are kept. frame_rate_ratio is rescaled so the covered
    duration stays the same.

    Args:
        seq: Sequence with at least two steps
        target_T: New length, at least 2

    Returns:
        FeatureSequence: The resampled sequence
    """
    if target_T < 2:
        raise ShapeError(f"Cannot rescale to fewer than 2 steps (got {target_T})")
    if seq.T < 2:
        raise ShapeError(f"Sequence '{seq.video_id}' has {seq.T} steps; rescaling needs at least 2")
    if target_T == seq.T:
        return seq

    positions = np.linspace(0.0, seq.T - 1, target_T)
    lower = np.floor(positions).astype(int)
    upper = np.minimum(lower + 1, seq.T - 1)
    weight = (positions - lower)[:, None]
    data = (1.0 - weight) * seq.data[lower] + weight * seq.data[upper]
    ratio = seq.frame_rate_ratio * seq.T / target_T
    return FeatureSequence(seq.video_id, data.astype(seq.data.dtype), ratio)


def save_features(path: Union[str, Path], seq: FeatureSequence) -> Path:
    """Write a sequence as a TVNF file (float32, row-major)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = FEATURE_MAGIC + struct.pack("<III", FEATURE_VERSION, seq.T, seq.C)
    path.write_bytes(header + seq.data.astype("<f4").tobytes(order="C"))
    return path


def _read_tvnf(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    if len(blob) < HEADER_SIZE or blob[:4] != FEATURE_MAGIC:
        raise FeatureFormatError(f"{path}: not a TVNF feature file")
    version, T, C = struct.unpack_from("<III", blob, 4)
    if version != FEATURE_VERSION:
        raise FeatureFormatError(f"{path}: unsupported feature file version {version}")
    expected = HEADER_SIZE + 4 * T * C
    if len(blob) != expected:
        raise FeatureFormatError(f"{path}: header says {T}x{C} but file holds {len(blob) - HEADER_SIZE} data bytes")
    return np.frombuffer(blob, dtype="<f4", offset=HEADER_SIZE).reshape(T, C).astype(np.float32)


def _read_csv(path: Path) -> np.ndarray:
    """One row per time step, one column per channel; an optional header row is skipped"""
    try:
        frame = pd.read_csv(path, header=None)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FeatureFormatError(f"{path}: unreadable CSV: {e}") from e
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    if len(numeric) > 1 and numeric.iloc[0].isna().all():
        numeric = numeric.iloc[1:]
    if numeric.isna().any().any():
        bad_row = int(np.argmax(numeric.isna().any(axis=1).to_numpy()))
        raise FeatureFormatError(f"{path}: row {bad_row + 1}: non-numeric or NaN value")
    return numeric.to_numpy(dtype=np.float64)


def load_features(
    path: Union[str, Path],
    expected_T: Optional[int] = None,
    expected_C: Optional[int] = None,
    rescale: bool = False,
    video_id: Optional[str] = None,
    duration: Optional[float] = None,
) -> FeatureSequence:
    """
    Load a TVNF or CSV feature file

    Args:
        path: File to read; .csv files are parsed as CSV, anything else as TVNF
        expected_T: Required length; a different length is rescaled when allowed
        expected_C: Required channel count
        rescale: Allow linear rescaling to expected_T
        video_id: Identifier; defaults to the file stem
        duration: Video duration in seconds; defaults to one second per stored step

    Returns:
        FeatureSequence: The loaded sequence

    Raises:
        FeatureFormatError: On malformed files, non-finite values or mismatching dims
    """
    path = Path(path)
    if not path.exists():
        raise FeatureFormatError(f"Feature file not found: {path}")
    data = _read_csv(path) if path.suffix.lower() == ".csv" else _read_tvnf(path)
    if not np.all(np.isfinite(data)):
        raise FeatureFormatError(f"{path}: contains NaN or Inf values")

    T, C = data.shape
    if expected_C is not None and C != expected_C:
        raise FeatureFormatError(f"{path}: expected {expected_C} channels, found {C}")
    ratio = (duration / T) if duration else 1.0
    seq = FeatureSequence(video_id or path.stem, data, ratio)
    if expected_T is not None and T != expected_T:
        if not rescale:
            raise FeatureFormatError(f"{path}: expected T={expected_T}, found T={T} (rescaling disabled)")
        logger.debug(f"Rescaling {seq.video_id} from T={T} to T={expected_T}")
        seq = rescale_sequence(seq, expected_T)
    return seq
