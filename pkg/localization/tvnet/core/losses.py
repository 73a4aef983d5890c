"""
TVNet - Loss Functions
"""

import logging
from typing import Optional, Union

import numpy as np

from tvnet.core.errors import ShapeError
from tvnet.core.tensor import Tensor, clip, log

logger = logging.getLogger(__name__)

# Probabilities are clamped this far inside (0, 1) before taking logs
BCE_MARGIN = 1e-7


def _as_tensor(value: Union[Tensor, np.ndarray], like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def mse_loss(pred: Tensor, target: Union[Tensor, np.ndarray], weights: Optional[np.ndarray] = None) -> Tensor:
    """
    Mean squared error

    Args:
        pred: Predictions, any shape
        target: Targets of the same shape
        weights: Optional per-row weights over the leading axis; the loss becomes
            the weighted mean of the per-row mean squared errors

    Returns:
        Tensor: Scalar loss
    """
    target = _as_tensor(target, pred)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    squared = diff * diff
    if weights is None:
        return squared.mean()

    weights = np.asarray(weights, dtype=pred.dtype)
    if weights.shape != pred.shape[:1]:
        raise ShapeError(f"mse_loss weights must have shape {pred.shape[:1]}, got {weights.shape}")
    total = float(weights.sum())
    if total <= 0:
        raise ValueError("mse_loss weights must have a positive sum")
    per_row = squared.reshape(pred.shape[0], -1).mean(axis=1)
    return (per_row * (weights / total)).sum()


def weighted_bce_loss(pred: Tensor, labels: Union[Tensor, np.ndarray], pos_weight: float = 1.0) -> Tensor:
    """
    Class-balanced binary cross-entropy

    Args:
        pred: Probabilities
        labels: Binary labels of the same shape
        pos_weight: Multiplier on the positive terms

    Returns:
        Tensor: Scalar loss, mean over elements
    """
    if pos_weight <= 0:
        raise ValueError(f"pos_weight must be positive, got {pos_weight}")
    labels = _as_tensor(labels, pred)
    if pred.shape != labels.shape:
        raise ShapeError(f"weighted_bce_loss shapes differ: {pred.shape} vs {labels.shape}")
    prob = clip(pred, BCE_MARGIN, 1.0 - BCE_MARGIN)
    positive = labels * log(prob) * pos_weight
    negative = (1.0 - labels) * log(1.0 - prob)
    return -(positive + negative).mean()


def balanced_pos_weight(labels: np.ndarray, cap: float = 100.0) -> float:
    """
    Ratio of negatives to positives, capped

    A batch without positives gets the cap.
    """
    labels = np.asarray(labels)
    positives = float(np.count_nonzero(labels > 0.5))
    negatives = float(labels.size - positives)
    if positives == 0:
        return cap
    weight = negatives / positives
    if weight > cap:
        logger.debug(f"pos_weight {weight:.1f} capped at {cap}")
        return cap
    # All-positive batch would give 0
    return max(weight, 1.0 / cap)
