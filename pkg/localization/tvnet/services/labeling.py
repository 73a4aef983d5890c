"""
TVNet - Supervision Targets

Builds the relative-distance targets of the voting encoders, the per-frame
boundary and actionness labels of the boundary network and the IoU targets of
the proposal scorer. All indices are feature steps on a length-T grid.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tvnet.core.errors import ShapeError
from tvnet.models.annotations import AnnotationSet
from tvnet.services.evaluation import segment_iou

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowLabels:
    """
    Relative-distance targets of one sliding window

    Attributes:
        start: Index of the window's first frame
        window_length: J
        r_start: (J,) signed distance to the closest start, divided by J, in [-1, 1]
        r_end: (J,) signed distance to the closest end, divided by J, in [-1, 1]
        low_weight: The video has no instances and the targets are sentinels
    """

    start: int
    window_length: int
    r_start: np.ndarray
    r_end: np.ndarray
    low_weight: bool = False


@dataclass(frozen=True)
class FrameLabels:
    start_label: np.ndarray
    end_label: np.ndarray
    action_label: np.ndarray


def closest_boundary(positions: np.ndarray, boundaries: Sequence[int]) -> np.ndarray:
    """
    Closest boundary to every position

    Equidistant boundaries resolve to the earlier one.
    """
    boundaries = np.sort(np.asarray(boundaries, dtype=np.int64))
    distance = np.abs(positions[:, None] - boundaries[None, :])
    # argmin returns the first minimum, i.e. the earlier boundary
    return boundaries[np.argmin(distance, axis=1)]


def relative_distance_targets(ann: AnnotationSet, T: int, J: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-frame targets for the whole sequence

    r_start[j] = (j - s*) / J and r_end[j] = (e* - j) / J, clamped to [-1, 1],
    with s* and e* the closest start and end over the whole sequence. Videos
    without instances get the sentinel +1 everywhere.

    Returns:
        Tuple[np.ndarray, np.ndarray]: r_start and r_end, each of length T
    """
    if J < 2:
        raise ShapeError(f"Window length must be >= 2, got {J}")
    intervals = ann.frame_intervals(T)
    if not intervals:
        return np.ones(T), np.ones(T)
    positions = np.arange(T, dtype=np.int64)
    starts = [start for start, _ in intervals]
    ends = [end for _, end in intervals]
    r_start = np.clip((positions - closest_boundary(positions, starts)) / J, -1.0, 1.0)
    r_end = np.clip((closest_boundary(positions, ends) - positions) / J, -1.0, 1.0)
    return r_start, r_end


def window_label_arrays(
    ann: AnnotationSet, T: int, J: int, stride: int = 1
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """
    Targets of every window as arrays

    Returns:
        Tuple: window starts (N,), r_start (N, J), r_end (N, J), low-weight flag
    """
    if T < J:
        raise ShapeError(f"Sequence length T={T} is shorter than the window length J={J}")
    r_start, r_end = relative_distance_targets(ann, T, J)
    window_starts = np.arange(0, T - J + 1, stride)
    start_windows = sliding_window_view(r_start, J)[window_starts]
    end_windows = sliding_window_view(r_end, J)[window_starts]
    return window_starts, start_windows.copy(), end_windows.copy(), ann.K == 0


def make_window_labels(ann: AnnotationSet, T: int, J: int, stride: int = 1) -> List[WindowLabels]:
    """
    Relative-distance targets for every sliding window

    Args:
        ann: Ground truth of the video
        T: Sequence length
        J: Window length
        stride: Step between window starts

    Returns:
        List[WindowLabels]: One entry per window, in order
    """
    window_starts, r_start, r_end, low_weight = window_label_arrays(ann, T, J, stride)
    if low_weight:
        logger.debug(f"Video {ann.video_id} has no instances; windows carry sentinel targets")
    return [
        WindowLabels(int(start), J, r_start[n], r_end[n], low_weight)
        for n, start in enumerate(window_starts)
    ]


def boundary_dilation(start: int, end: int, ratio: float = 0.05) -> int:
    """Half-width of the boundary neighbourhood: max(1, round(ratio * duration))"""
    return max(1, int(math.floor(ratio * (end - start) + 0.5)))


def make_tem_labels(ann: AnnotationSet, T: int, dilation_ratio: float = 0.05) -> FrameLabels:
    """
    Per-frame binary labels for the boundary network

    action_label is 1 on frames s..e of every instance; start_label is 1 on
    [s - d, s + d] and end_label on [e - d, e + d], clipped to the sequence.
    """
    if T < 2:
        raise ShapeError(f"T must be >= 2, got {T}")
    start_label = np.zeros(T)
    end_label = np.zeros(T)
    action_label = np.zeros(T)
    for start, end in ann.frame_intervals(T):
        action_label[start:end + 1] = 1.0
        d = boundary_dilation(start, end, dilation_ratio)
        start_label[max(0, start - d):min(T, start + d + 1)] = 1.0
        end_label[max(0, end - d):min(T, end + d + 1)] = 1.0
    return FrameLabels(start_label, end_label, action_label)


def make_pem_labels(proposals: np.ndarray, ann: AnnotationSet, T: int) -> np.ndarray:
    """
    Best IoU of each proposal with any ground-truth instance

    Args:
        proposals: (P, 2) array of (start, end) feature-step positions
        ann: Ground truth of the video
        T: Grid length the proposals live on

    Returns:
        np.ndarray: (P,) targets in [0, 1]; all zero for a video without instances
    """
    proposals = np.asarray(proposals, dtype=np.float64).reshape(-1, 2)
    intervals = np.asarray(ann.frame_intervals(T), dtype=np.float64).reshape(-1, 2)
    targets = np.zeros(len(proposals))
    if len(intervals) == 0:
        return targets
    for index, proposal in enumerate(proposals):
        targets[index] = segment_iou(proposal, intervals).max()
    return targets
