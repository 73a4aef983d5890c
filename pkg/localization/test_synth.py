"""
Tests for the synthetic dataset generator
"""

import sys
import os

# Make the tvnet package importable when run from anywhere
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest

from tvnet.config.settings import SynthConfig
from tvnet.core.errors import SynthesisError
from tvnet.services.synth import class_label, generate_synthetic, pack_intervals, render_features

SMALL = SynthConfig(num_train=6, num_test=3, T=64, C=6, num_classes=3, duration_range=(4, 12),
                    actions_per_video=(1, 3), edge_margin=3, min_gap=5, seed=11)


def test_same_seed_gives_identical_dataset():
    first_annotations, first_features = generate_synthetic(SMALL)
    second_annotations, second_features = generate_synthetic(SMALL)
    assert first_annotations == second_annotations
    for video_id, features in first_features.items():
        np.testing.assert_array_equal(features.data, second_features[video_id].data)


def test_different_seed_changes_dataset():
    annotations, features = generate_synthetic(SMALL)
    other_annotations, other_features = generate_synthetic(SMALL.model_copy(update={"seed": 12}))
    video_id = "synth_train_0000"
    assert not np.array_equal(features[video_id].data, other_features[video_id].data)


def test_split_layout_and_labels():
    annotations, features = generate_synthetic(SMALL)
    assert list(annotations) == [f"synth_train_{i:04d}" for i in range(6)] + [f"synth_test_{i:04d}" for i in range(3)]
    assert {a.subset for a in annotations.values()} == {"training", "testing"}
    for video_id, annotation in annotations.items():
        assert annotation.duration == 64.0
        assert features[video_id].data.shape == (64, 6)
        assert features[video_id].frame_rate_ratio == 1.0
        assert len(annotation.video_classes) == 1
        label = annotation.video_classes[0].label
        assert label in {class_label(k) for k in range(3)}
        assert all(instance.label == label for instance in annotation.instances)


def test_instances_respect_margins_and_gaps():
    rng = np.random.default_rng(0)
    for _ in range(200):
        intervals = pack_intervals(SMALL, rng)
        assert 1 <= len(intervals) <= 3
        for start, end in intervals:
            assert 4 <= end - start <= 12
            assert start >= SMALL.edge_margin
            assert end <= SMALL.T - 1 - SMALL.edge_margin
        for (_, previous_end), (next_start, _) in zip(intervals, intervals[1:]):
            assert next_start - previous_end >= SMALL.min_gap


def test_zero_actions_allowed():
    cfg = SMALL.model_copy(update={"actions_per_video": (0, 0)})
    assert pack_intervals(cfg, np.random.default_rng(0)) == []


def test_noise_free_templates():
    cfg = SMALL.model_copy(update={"snr": float("inf"), "transient": 0.5, "amplitude": 2.0})
    data = render_features(cfg, [(10, 20)], class_index=1, rng=np.random.default_rng(0))
    plateau, ramp = data[:, 2], data[:, 3]
    np.testing.assert_array_equal(plateau[11:21], np.full(10, 2.0))
    assert plateau[10] == 2.5
    np.testing.assert_allclose(ramp[10:20], 2.0 * np.arange(10) / 10)
    assert ramp[20] == 2.5
    assert np.all(plateau[:10] == 0) and np.all(plateau[21:] == 0)
    assert np.all(data[:, [0, 1, 4, 5]] == 0)


def test_noise_level_follows_snr():
    cfg = SMALL.model_copy(update={"T": 2000, "snr": 4.0})
    data = render_features(cfg, [], class_index=0, rng=np.random.default_rng(0))
    assert np.std(data) == pytest.approx(0.25, rel=0.05)


def test_unplaceable_actions_raise():
    cfg = SynthConfig(num_train=1, num_test=0, T=50, C=2, num_classes=1, duration_range=(20, 20),
                      actions_per_video=(5, 5), edge_margin=2, min_gap=4)
    with pytest.raises(SynthesisError):
        generate_synthetic(cfg)


def test_layout_validation():
    with pytest.raises(ValueError):
        SynthConfig(C=4, num_classes=3)
    with pytest.raises(ValueError):
        SynthConfig(T=30, duration_range=(8, 40))


def test_default_layout_keeps_boundaries_apart():
    cfg = SynthConfig()
    assert cfg.separates_boundaries(15) and cfg.separates_boundaries(5)
    rng = np.random.default_rng(1)
    for _ in range(200):
        intervals = pack_intervals(cfg, rng)
        assert intervals[0][0] >= 16 and intervals[-1][1] <= cfg.T - 17
        for (previous_start, previous_end), (next_start, next_end) in zip(intervals, intervals[1:]):
            assert next_start - previous_start >= 33
            assert next_end - previous_end >= 33


def test_tight_layout_does_not_separate_boundaries():
    assert not SMALL.separates_boundaries(5)
    assert SMALL.separates_boundaries(2)
    assert not SynthConfig(edge_margin=16, min_gap=20).separates_boundaries(15)
