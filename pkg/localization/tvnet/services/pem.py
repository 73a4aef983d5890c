"""
TVNet - Proposal Confidence

A small MLP scores a candidate segment from a fixed-length profile sampled
inside the segment and in the two flanking regions around it.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from tvnet.config.settings import PemConfig
from tvnet.core.errors import ShapeError
from tvnet.core.layers import Linear, Module
from tvnet.core.losses import mse_loss
from tvnet.core.tensor import Tensor, relu, sigmoid
from tvnet.models.dataset import VideoSample
from tvnet.services.labeling import make_pem_labels
from tvnet.services.trainer import Trainer, TrainResult, stage_rng

logger = logging.getLogger(__name__)


def sample_profile(signal: np.ndarray, start: float, end: float,
                   num_interior: int = 16, num_flank: int = 8) -> np.ndarray:
    """
    Fixed-length profile of a segment

    num_flank samples over [start - d/2, start], num_interior over [start, end]
    and num_flank over [end, end + d/2], d = end - start. Positions are clamped
    to [0, T-1] and values linearly interpolated.

    Args:
        signal: (T,) or (T, C) per-frame values
        start: Segment start (feature steps)
        end: Segment end (feature steps)

    Returns:
        np.ndarray: (num_interior + 2 * num_flank,) or that many rows times C, flattened
    """
    signal = np.asarray(signal, dtype=np.float64)
    T = signal.shape[0]
    flank = (end - start) / 2.0
    positions = np.concatenate([
        np.linspace(start - flank, start, num_flank),
        np.linspace(start, end, num_interior),
        np.linspace(end, end + flank, num_flank),
    ])
    positions = np.clip(positions, 0.0, T - 1)
    lower = np.floor(positions).astype(int)
    upper = np.minimum(lower + 1, T - 1)
    weight = positions - lower
    if signal.ndim == 1:
        return (1.0 - weight) * signal[lower] + weight * signal[upper]
    return ((1.0 - weight)[:, None] * signal[lower] + weight[:, None] * signal[upper]).reshape(-1)


def proposal_features(proposals: np.ndarray, signal: np.ndarray, config: PemConfig) -> np.ndarray:
    proposals = np.asarray(proposals, dtype=np.float64).reshape(-1, 2)
    if len(proposals) == 0:
        return np.zeros((0, input_size(config, signal)))
    return np.stack([
        sample_profile(signal, start, end, config.num_interior, config.num_flank)
        for start, end in proposals
    ])


def input_size(config: PemConfig, signal_or_channels: Union[np.ndarray, int, None] = None) -> int:
    samples = config.num_interior + 2 * config.num_flank
    if config.input_source == "actionness":
        return samples
    channels = signal_or_channels if isinstance(signal_or_channels, int) else np.asarray(signal_or_channels).shape[1]
    return samples * channels


class PemModel(Module):
    """MLP: profile -> hidden -> relu -> 1 -> sigmoid"""

    def __init__(self, in_features: int, config: PemConfig, rng: np.random.Generator, dtype=np.float64):
        self.in_features = in_features
        self.hidden = Linear(in_features, config.hidden_size, rng, dtype=dtype)
        self.output = Linear(config.hidden_size, 1, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"PEM expects (P, {self.in_features}) input, got {x.shape}")
        return sigmoid(self.output(relu(self.hidden(x)))).reshape(x.shape[0])

    @property
    def dtype(self):
        return self.hidden.weight.dtype


def pem_score_batch(model: PemModel, proposals: np.ndarray, signal: np.ndarray, config: PemConfig) -> np.ndarray:
    """Confidence of each (start, end) row, in (0, 1)"""
    features = proposal_features(proposals, signal, config)
    if len(features) == 0:
        return np.zeros(0)
    return model(Tensor(features.astype(model.dtype))).data.astype(np.float64)


def pem_score(model: PemModel, proposal: Tuple[float, float], b_action: np.ndarray,
              config: Optional[PemConfig] = None) -> float:
    """
    Confidence of one proposal

    Raises:
        ValueError: For a segment shorter than one frame
    """
    start, end = proposal
    if end - start < 1:
        raise ValueError(f"Proposal [{start}, {end}] is shorter than one frame")
    return float(pem_score_batch(model, np.array([[start, end]]), b_action, config or PemConfig())[0])


def jittered_ground_truth(sample: VideoSample, config: PemConfig, rng: np.random.Generator) -> np.ndarray:
    """Each instance plus jitter_copies copies with both ends moved by up to +-jitter of its duration"""
    rows = []
    T = sample.T
    for start, end in sample.annotation.frame_intervals(T):
        rows.append((float(start), float(end)))
        duration = end - start
        for _ in range(config.jitter_copies):
            offsets = rng.uniform(-config.jitter, config.jitter, size=2) * duration
            rows.append((start + offsets[0], end + offsets[1]))
    proposals = np.clip(np.asarray(rows, dtype=np.float64).reshape(-1, 2), 0.0, T - 1)
    return proposals[proposals[:, 1] - proposals[:, 0] >= 1.0]


def build_pem_training_set(samples: Sequence[VideoSample], candidates: Sequence[np.ndarray],
                           signals: Sequence[np.ndarray], config: PemConfig, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Profiles and IoU targets of the training proposals

    Per video the proposals are the given candidates plus jittered ground
    truth, capped at max_proposals_per_video by a seeded subsample.

    Args:
        samples: Training videos
        candidates: (P, 2) candidate proposals per video (feature steps)
        signals: Profile source per video (actionness or features)
        config: PEM settings
        seed: Seed of the jitter and the subsampling

    Returns:
        Tuple[np.ndarray, np.ndarray]: features (N, D) and targets (N,)
    """
    features: List[np.ndarray] = []
    targets: List[np.ndarray] = []
    for index, (sample, video_candidates, signal) in enumerate(zip(samples, candidates, signals)):
        rng = stage_rng(seed, "pem-proposals", index)
        proposals = np.vstack([
            np.asarray(video_candidates, dtype=np.float64).reshape(-1, 2),
            jittered_ground_truth(sample, config, rng),
        ])
        proposals = proposals[proposals[:, 1] - proposals[:, 0] >= 1.0]
        if len(proposals) > config.max_proposals_per_video:
            keep = np.sort(rng.choice(len(proposals), config.max_proposals_per_video, replace=False))
            proposals = proposals[keep]
        if len(proposals) == 0:
            continue
        features.append(proposal_features(proposals, signal, config))
        targets.append(make_pem_labels(proposals, sample.annotation, sample.T))
    total = sum(len(chunk) for chunk in targets)
    if total < config.min_training_proposals:
        raise ValueError(
            f"Only {total} training proposals for the proposal scorer; at least {config.min_training_proposals} needed"
        )
    logger.info(f"Built {total} proposal-scorer training examples from {len(samples)} videos")
    return np.concatenate(features), np.concatenate(targets)


def pem_train(model: PemModel, features: np.ndarray, targets: np.ndarray, config: PemConfig, seed: int,
              state_path: Optional[Union[str, Path]] = None, resume: bool = False,
              max_epochs: Optional[int] = None) -> TrainResult:
    """
    Regress the confidence onto the IoU targets with MSE

    Raises:
        ValueError: With fewer than min_training_proposals examples
    """
    if len(features) < config.min_training_proposals:
        raise ValueError(
            f"Only {len(features)} training proposals; at least {config.min_training_proposals} needed"
        )
    inputs = features.astype(model.dtype)

    def batch_loss(indices: np.ndarray) -> Tensor:
        return mse_loss(model(Tensor(inputs[indices])), targets[indices])

    trainer = Trainer("pem", model, config.schedule, seed, state_path)
    return trainer.fit(len(inputs), batch_loss, resume=resume, max_epochs=max_epochs)
