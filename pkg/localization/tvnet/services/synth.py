"""
TVNet - Synthetic Dataset Generator

Untrimmed sequences with non-overlapping action instances. Class k owns two
channels: a plateau on channel 2k and a ramp on channel 2k+1, each active on
the instance frames. A short transient marks the first frame (plateau
channel) and the last frame (ramp channel). Background is noise only.
"""

import logging
from typing import Dict, List, Tuple

import numpy as np

from tvnet.config.settings import SynthConfig
from tvnet.core.errors import SynthesisError
from tvnet.models.annotations import ActionInstance, AnnotationSet, VideoClass
from tvnet.models.features import FeatureSequence
from tvnet.services.trainer import stage_rng

logger = logging.getLogger(__name__)

MAX_PACKING_ATTEMPTS = 1000

SPLITS = (("train", "training"), ("test", "testing"))


def class_label(index: int) -> str:
    return f"class_{index}"


def pack_intervals(cfg: SynthConfig, rng: np.random.Generator) -> List[Tuple[int, int]]:
    """
    Sample non-overlapping [start, end] frame intervals

    Each attempt draws a count and durations, then spreads the free frames
    randomly over the gaps. Ends stay edge_margin frames from the sequence
    ends and consecutive instances are at least min_gap frames apart.

    Raises:
        SynthesisError: If no attempt fits inside T
    """
    low, high = cfg.actions_per_video
    shortest, longest = cfg.duration_range
    last_frame = cfg.T - 1
    for _ in range(MAX_PACKING_ATTEMPTS):
        count = int(rng.integers(low, high + 1))
        if count == 0:
            return []
        durations = rng.integers(shortest, longest + 1, size=count)
        needed = int(durations.sum()) + (count - 1) * cfg.min_gap + 2 * cfg.edge_margin
        slack = last_frame - needed
        if slack < 0:
            continue
        spare = rng.multinomial(slack, np.full(count + 1, 1.0 / (count + 1)))
        intervals = []
        cursor = cfg.edge_margin + int(spare[0])
        for index, duration in enumerate(durations):
            start = cursor
            end = start + int(duration)
            intervals.append((start, end))
            cursor = end + cfg.min_gap + int(spare[index + 1])
        return intervals
    raise SynthesisError(
        f"Could not place {low}-{high} actions of {shortest}-{longest} frames in T={cfg.T} "
        f"after {MAX_PACKING_ATTEMPTS} attempts"
    )


def render_features(cfg: SynthConfig, intervals: List[Tuple[int, int]], class_index: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Class templates on the instance frames plus Gaussian noise of std amplitude / snr"""
    data = np.zeros((cfg.T, cfg.C))
    plateau = 2 * class_index
    ramp = plateau + 1
    for start, end in intervals:
        frames = np.arange(start, end + 1)
        data[frames, plateau] = cfg.amplitude
        data[frames, ramp] = cfg.amplitude * (frames - start) / (end - start)
        data[start, plateau] += cfg.transient
        data[end, ramp] += cfg.transient
    noise_std = cfg.amplitude / cfg.snr
    if np.isfinite(noise_std) and noise_std > 0:
        data += rng.normal(0.0, noise_std, size=data.shape)
    return data


def generate_video(cfg: SynthConfig, video_id: str, subset: str,
                   rng: np.random.Generator) -> Tuple[AnnotationSet, FeatureSequence]:
    class_index = int(rng.integers(cfg.num_classes))
    intervals = pack_intervals(cfg, rng)
    label = class_label(class_index)
    # Duration equals T, so one feature step is one second
    annotation = AnnotationSet(
        video_id,
        float(cfg.T),
        tuple(ActionInstance(float(start), float(end), label) for start, end in intervals),
        (VideoClass(label, 1.0),),
        subset,
    )
    features = FeatureSequence(video_id, render_features(cfg, intervals, class_index, rng), 1.0)
    return annotation, features


def generate_synthetic(cfg: SynthConfig) -> Tuple[Dict[str, AnnotationSet], Dict[str, FeatureSequence]]:
    """
    Generate the train and test splits

    Every video draws from its own generator seeded by (seed, split, index),
    so a fixed seed gives a bit-identical dataset.

    Args:
        cfg: Generator settings

    Returns:
        Tuple: annotations and features keyed by video id
    """
    annotations: Dict[str, AnnotationSet] = {}
    features: Dict[str, FeatureSequence] = {}
    for (short_name, subset), count in zip(SPLITS, (cfg.num_train, cfg.num_test)):
        for index in range(count):
            video_id = f"synth_{short_name}_{index:04d}"
            rng = stage_rng(cfg.seed, f"synth-{short_name}", index)
            annotations[video_id], features[video_id] = generate_video(cfg, video_id, subset, rng)
    total_instances = sum(annotation.K for annotation in annotations.values())
    logger.info(
        f"Generated {cfg.num_train} train and {cfg.num_test} test videos "
        f"with {total_instances} action instances (T={cfg.T}, C={cfg.C})"
    )
    return annotations, features
