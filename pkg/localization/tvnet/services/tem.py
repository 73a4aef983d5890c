"""
TVNet - Boundary Evaluation Network

Two convolutional branches over the feature sequence: one emits naive start
and end scores, the other per-frame actionness used to suppress background.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from tvnet.config.settings import TemConfig
from tvnet.core.errors import ShapeError
from tvnet.core.layers import Conv1dLayer, Module
from tvnet.core.losses import BCE_MARGIN, balanced_pos_weight, weighted_bce_loss
from tvnet.core.tensor import Tensor, relu, sigmoid
from tvnet.models.dataset import VideoSample
from tvnet.models.features import FeatureSequence
from tvnet.services.labeling import make_tem_labels
from tvnet.services.trainer import Trainer, TrainResult

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoundaryScores:
    """Per-frame start, end and actionness probabilities, each of length T"""

    b_start: np.ndarray
    b_end: np.ndarray
    b_action: np.ndarray

    @property
    def T(self) -> int:
        return len(self.b_action)

    @classmethod
    def constant(cls, T: int, value: float = 1.0) -> "BoundaryScores":
        filled = np.full(T, value)
        return cls(filled.copy(), filled.copy(), filled.copy())


class TemModel(Module):
    """conv(k) -> relu -> conv(k) -> relu -> conv(1), twice: boundary head (2 maps) and actionness head (1 map)"""

    def __init__(self, in_channels: int, config: TemConfig, rng: np.random.Generator, dtype=np.float64):
        hidden = config.hidden_channels
        kernel = config.kernel_size
        self.in_channels = in_channels
        self.boundary_branch = [
            Conv1dLayer(in_channels, hidden, kernel, rng, same=True, dtype=dtype),
            Conv1dLayer(hidden, hidden, kernel, rng, same=True, dtype=dtype),
            Conv1dLayer(hidden, 2, 1, rng, dtype=dtype),
        ]
        self.actionness_branch = [
            Conv1dLayer(in_channels, hidden, kernel, rng, same=True, dtype=dtype),
            Conv1dLayer(hidden, hidden, kernel, rng, same=True, dtype=dtype),
            Conv1dLayer(hidden, 1, 1, rng, dtype=dtype),
        ]

    @staticmethod
    def _branch(layers: Sequence[Conv1dLayer], x: Tensor) -> Tensor:
        hidden = relu(layers[0](x))
        hidden = relu(layers[1](hidden))
        return sigmoid(layers[2](hidden))

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """
        Args:
            x: Features as (B, C, T)

        Returns:
            Tuple[Tensor, Tensor]: boundary probabilities (B, 2, T) and actionness (B, 1, T)
        """
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(f"TEM expects (B, {self.in_channels}, T) input, got {x.shape}")
        return self._branch(self.boundary_branch, x), self._branch(self.actionness_branch, x)


def _as_batch(sequences: Sequence[FeatureSequence], dtype) -> Tensor:
    return Tensor(np.stack([seq.data.T for seq in sequences]).astype(dtype))


def tem_forward(model: TemModel, features: FeatureSequence) -> BoundaryScores:
    """
    Boundary and actionness scores of one video

    Raises:
        ShapeError: If the feature channels do not match the model
    """
    if features.C != model.in_channels:
        raise ShapeError(f"Features of '{features.video_id}' have {features.C} channels, TEM expects {model.in_channels}")
    dtype = model.boundary_branch[0].weights.dtype
    boundary, actionness = model(_as_batch([features], dtype))
    # Keep strictly inside (0, 1) even where the sigmoid saturates
    b = np.clip(boundary.data[0], BCE_MARGIN, 1.0 - BCE_MARGIN)
    a = np.clip(actionness.data[0, 0], BCE_MARGIN, 1.0 - BCE_MARGIN)
    return BoundaryScores(b[0].astype(np.float64), b[1].astype(np.float64), a.astype(np.float64))


def suppress_background(features: FeatureSequence, b_action: np.ndarray) -> FeatureSequence:
    """Scale every frame's features by its actionness"""
    b_action = np.asarray(b_action)
    if b_action.shape != (features.T,):
        raise ShapeError(f"Actionness has shape {b_action.shape}, features have T={features.T}")
    return features.with_data(features.data * b_action[:, None].astype(features.data.dtype))


def tem_train(model: TemModel, samples: Sequence[VideoSample], config: TemConfig, seed: int,
              state_path: Optional[Union[str, Path]] = None, resume: bool = False,
              max_epochs: Optional[int] = None) -> TrainResult:
    """
    Train the boundary network

    The loss is the sum of three class-balanced BCE terms (start, end,
    actionness) with pos_weight = #neg / #pos per term and batch, capped.

    Args:
        model: Network to train in place
        samples: Training videos, all with the same T
        config: Hyperparameters and schedule
        seed: Seed of the shuffling
        state_path: Resumable training state file
        resume: Continue from state_path

    Returns:
        TrainResult: Loss per epoch
    """
    dtype = model.boundary_branch[0].weights.dtype
    inputs = np.stack([sample.features.data.T for sample in samples]).astype(dtype) if samples else None
    labels = [make_tem_labels(sample.annotation, sample.T, config.boundary_dilation) for sample in samples]
    starts = np.stack([label.start_label for label in labels]) if labels else None
    ends = np.stack([label.end_label for label in labels]) if labels else None
    actions = np.stack([label.action_label for label in labels]) if labels else None

    def batch_loss(indices: np.ndarray) -> Tensor:
        boundary, actionness = model(Tensor(inputs[indices]))
        total = None
        for prediction, target in (
            (boundary[:, 0, :], starts[indices]),
            (boundary[:, 1, :], ends[indices]),
            (actionness[:, 0, :], actions[indices]),
        ):
            term = weighted_bce_loss(prediction, target, balanced_pos_weight(target, config.pos_weight_cap))
            total = term if total is None else total + term
        return total

    trainer = Trainer("tem", model, config.schedule, seed, state_path)
    return trainer.fit(len(samples), batch_loss, resume=resume, max_epochs=max_epochs)


def actionness_separation(model: TemModel, samples: Sequence[VideoSample]) -> float:
    """Mean actionness inside instances minus mean outside, over all samples"""
    inside: List[np.ndarray] = []
    outside: List[np.ndarray] = []
    for sample in samples:
        scores = tem_forward(model, sample.features)
        mask = make_tem_labels(sample.annotation, sample.T).action_label > 0.5
        inside.append(scores.b_action[mask])
        outside.append(scores.b_action[~mask])
    return float(np.concatenate(inside).mean() - np.concatenate(outside).mean())
