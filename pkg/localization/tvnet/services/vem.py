"""
TVNet - Voting Evidence

Window encoders predict, for every frame of a sliding window, the signed
distance to the closest start and end. Accumulating those predictions over
every window covering a frame gives its start and end voting scores.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tvnet.config.settings import VemConfig
from tvnet.core.errors import ShapeError
from tvnet.core.layers import Module
from tvnet.core.losses import mse_loss
from tvnet.core.tensor import Tensor
from tvnet.handlers.encoder_factory import EncoderFactory, VemEncoder
from tvnet.models.features import FeatureSequence
from tvnet.services.labeling import window_label_arrays
from tvnet.services.trainer import Trainer, TrainResult, stage_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowPredictions:
    """
    Encoder outputs of every window of one video

    Attributes:
        window_starts: (N,) first frame of each window
        r_start: (N, J) predicted distance to the closest start
        r_end: (N, J) predicted distance to the closest end
    """

    window_starts: np.ndarray
    r_start: np.ndarray
    r_end: np.ndarray

    @property
    def window_length(self) -> int:
        return self.r_start.shape[1]

    def __len__(self) -> int:
        return len(self.window_starts)


@dataclass(frozen=True)
class VotingScores:
    """
    Accumulated start and end evidence per frame

    Attributes:
        v_start: (T,) start votes
        v_end: (T,) end votes
        window_lengths: Window lengths that contributed
        normalized: Both sequences are min-max normalized to [0, 1]
    """

    v_start: np.ndarray
    v_end: np.ndarray
    window_lengths: Tuple[int, ...] = ()
    normalized: bool = False

    @property
    def T(self) -> int:
        return len(self.v_start)

    def normalize(self) -> "VotingScores":
        if self.normalized:
            return self
        return VotingScores(minmax_normalize(self.v_start, "start votes"),
                            minmax_normalize(self.v_end, "end votes"), self.window_lengths, True)


class VemPair(Module):
    """Separate start and end encoders for one window length"""

    def __init__(self, window_length: int, in_channels: int, config: VemConfig,
                 rng: np.random.Generator, dtype=np.float64):
        self.window_length = window_length
        self.in_channels = in_channels
        self.start = EncoderFactory.create_encoder(config.encoder, window_length, in_channels, config, rng, dtype)
        self.end = EncoderFactory.create_encoder(config.encoder, window_length, in_channels, config, rng, dtype)

    @property
    def dtype(self):
        return next(self.start.named_parameters())[1].dtype


def extract_windows(features: FeatureSequence, J: int, stride: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sliding windows of a sequence

    Returns:
        Tuple[np.ndarray, np.ndarray]: window starts (N,) and windows (N, C, J)
    """
    if features.T < J:
        raise ShapeError(
            f"Sequence '{features.video_id}' has T={features.T} < J={J}; pad or rescale the features first"
        )
    window_starts = np.arange(0, features.T - J + 1, stride)
    # (T - J + 1, C, J)
    windows = sliding_window_view(features.data, J, axis=0)[window_starts]
    return window_starts, np.ascontiguousarray(windows)


def encode_windows(encoder: VemEncoder, windows: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    outputs = []
    for begin in range(0, len(windows), batch_size):
        outputs.append(encoder(Tensor(windows[begin:begin + batch_size])).data)
    if not outputs:
        return np.zeros((0, encoder.window_length))
    return np.concatenate(outputs, axis=0)


def vem_forward(model: VemPair, features: FeatureSequence, stride: int = 1, batch_size: int = 1024) -> WindowPredictions:
    """
    Run both encoders over every window of a (suppressed) sequence

    Windows are encoded independently of each other.
    """
    if features.C != model.in_channels:
        raise ShapeError(f"Features have {features.C} channels, encoders expect {model.in_channels}")
    window_starts, windows = extract_windows(features, model.window_length, stride)
    windows = windows.astype(model.dtype, copy=False)
    return WindowPredictions(
        window_starts,
        encode_windows(model.start, windows, batch_size).astype(np.float64),
        encode_windows(model.end, windows, batch_size).astype(np.float64),
    )


def window_contributions(r: np.ndarray, self_vote: bool = False) -> np.ndarray:
    """
    Start-vote contribution of each window to each of its frames

    For the frame at in-window offset k the frames before it vote -r and the
    frames after it vote +r: total - 2 * prefix(k) - r[k]. With self_vote the
    frame itself also votes +r[k]; self_vote=True is the as-printed variant of
    the vote sum, with the own frame on the "after" side.
    """
    prefix = np.cumsum(r, axis=1) - r  # sum of r[:, :k]
    total = r.sum(axis=1, keepdims=True)
    contribution = total - 2.0 * prefix
    if not self_vote:
        contribution = contribution - r
    return contribution


def accumulate_votes(preds: WindowPredictions, T: int, J: Optional[int] = None,
                     self_vote: bool = False) -> VotingScores:
    """
    Sum every window's evidence onto the frames it covers

    For each frame t and each window n covering it, start votes add -r_start
    over the window frames before t and +r_start over those after t; end votes
    use the opposite signs.

    Args:
        preds: Window predictions of one video
        T: Sequence length
        J: Window length (checked against the predictions when given)
        self_vote: Count the frame's own prediction on the "after" side

    Returns:
        VotingScores: Raw (unnormalized) votes
    """
    window_length = preds.window_length
    if J is not None and J != window_length:
        raise ShapeError(f"Predictions have window length {window_length}, expected {J}")
    if len(preds) and preds.window_starts.max() + window_length > T:
        raise ShapeError(f"Windows extend past T={T}")
    targets = (preds.window_starts[:, None] + np.arange(window_length)[None, :]).ravel()
    v_start = np.bincount(targets, weights=window_contributions(preds.r_start, self_vote).ravel(), minlength=T)
    v_end = -np.bincount(targets, weights=window_contributions(preds.r_end, self_vote).ravel(), minlength=T)
    return VotingScores(v_start[:T], v_end[:T], (window_length,), False)


def minmax_normalize(values: np.ndarray, label: str = "sequence") -> np.ndarray:
    """Scale to [0, 1]; a constant sequence becomes all zeros"""
    values = np.asarray(values, dtype=np.float64)
    low, high = values.min(), values.max()
    if high == low:
        logger.warning(f"Constant {label}; normalized to zeros")
        return np.zeros_like(values)
    return (values - low) / (high - low)


def fuse_window_scales(scores_a: VotingScores, scores_b: VotingScores, mode: str = "minmax") -> VotingScores:
    """
    Combine voting scores from two window lengths

    minmax normalizes each input to [0, 1] and averages; sum adds the raw votes.
    """
    if scores_a.T != scores_b.T:
        raise ShapeError(f"Cannot fuse voting scores of lengths {scores_a.T} and {scores_b.T}")
    lengths = tuple(scores_a.window_lengths) + tuple(scores_b.window_lengths)
    if mode == "sum":
        return VotingScores(scores_a.v_start + scores_b.v_start, scores_a.v_end + scores_b.v_end, lengths, False)
    a = scores_a.normalize()
    b = scores_b.normalize()
    return VotingScores((a.v_start + b.v_start) / 2.0, (a.v_end + b.v_end) / 2.0, lengths, True)


def fuse_all_scales(scores: Sequence[VotingScores], mode: str = "minmax") -> VotingScores:
    """Equal-weight fusion of any number of window lengths; one input is only normalized"""
    if not scores:
        raise ValueError("No voting scores to fuse")
    if len(scores) == 2:
        return fuse_window_scales(scores[0], scores[1], mode)
    lengths = tuple(length for score in scores for length in score.window_lengths)
    if mode == "sum":
        return VotingScores(np.sum([s.v_start for s in scores], axis=0),
                            np.sum([s.v_end for s in scores], axis=0), lengths, False)
    normalized = [score.normalize() for score in scores]
    return VotingScores(np.mean([s.v_start for s in normalized], axis=0),
                        np.mean([s.v_end for s in normalized], axis=0), lengths, True)


@dataclass
class WindowTrainingSet:
    """Windows pooled over all training videos"""

    windows: np.ndarray
    r_start: np.ndarray
    r_end: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.windows)


def build_window_training_set(sequences: Sequence[FeatureSequence], annotations, J: int,
                              stride: int = 1, empty_video_weight: float = 0.1) -> WindowTrainingSet:
    """
    Pair every window of every (suppressed) sequence with its targets

    Args:
        sequences: Encoder inputs, one per video
        annotations: AnnotationSet per video, same order
        J: Window length
        stride: Step between windows
        empty_video_weight: Loss weight of windows from videos without instances
    """
    windows, starts, ends, weights = [], [], [], []
    for features, annotation in zip(sequences, annotations):
        _, video_windows = extract_windows(features, J, stride)
        _, r_start, r_end, low_weight = window_label_arrays(annotation, features.T, J, stride)
        windows.append(video_windows)
        starts.append(r_start)
        ends.append(r_end)
        weights.append(np.full(len(r_start), empty_video_weight if low_weight else 1.0))
    if not windows:
        raise ValueError("No training videos for the voting encoders")
    return WindowTrainingSet(np.concatenate(windows), np.concatenate(starts),
                             np.concatenate(ends), np.concatenate(weights))


def train_encoder(encoder: VemEncoder, windows: np.ndarray, targets: np.ndarray, weights: np.ndarray,
                  config: VemConfig, seed: int, stage: str,
                  state_path: Optional[Union[str, Path]] = None, resume: bool = False,
                  max_epochs: Optional[int] = None) -> TrainResult:
    """Per-window MSE regression of one encoder"""
    windows = windows.astype(next(encoder.named_parameters())[1].dtype, copy=False)
    uniform = bool(np.all(weights == weights[0])) if len(weights) else True

    def batch_loss(indices: np.ndarray) -> Tensor:
        prediction = encoder(Tensor(windows[indices]))
        return mse_loss(prediction, targets[indices], None if uniform else weights[indices])

    trainer = Trainer(stage, encoder, config.schedule, seed, state_path)
    return trainer.fit(len(windows), batch_loss, resume=resume, max_epochs=max_epochs)


def vem_train(model: VemPair, training_set: WindowTrainingSet, config: VemConfig, seed: int,
              state_dir: Optional[Union[str, Path]] = None, resume: bool = False,
              max_epochs: Optional[int] = None) -> Dict[str, TrainResult]:
    """
    Train the start and end encoders of one window length independently

    Returns:
        Dict[str, TrainResult]: Loss curves keyed "start" and "end"
    """
    results = {}
    for kind, encoder, targets in (
        ("start", model.start, training_set.r_start),
        ("end", model.end, training_set.r_end),
    ):
        stage = f"vem-{kind}-J{model.window_length}"
        state_path = Path(state_dir) / f"{stage}.state.tvnc" if state_dir else None
        results[kind] = train_encoder(encoder, training_set.windows, targets, training_set.weights,
                                      config, seed, stage, state_path, resume, max_epochs)
    return results


def create_vem(window_length: int, in_channels: int, config: VemConfig, seed: int, dtype=np.float64) -> VemPair:
    """Encoders with initial weights drawn from a generator tied to (seed, J)"""
    return VemPair(window_length, in_channels, config, stage_rng(seed, "vem-init", window_length), dtype)
