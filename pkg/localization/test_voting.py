"""
Tests for window encoders, vote accumulation and multi-scale fusion
"""

import sys
import os

# Make the tvnet package importable when run from anywhere
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import logging

import numpy as np
import pytest

from tvnet.config.settings import DATASET_PRESETS, PipelineConfig, StageSchedule, VemConfig
from tvnet.core.errors import ConfigError, ShapeError
from tvnet.core.tensor import Tensor
from tvnet.handlers.encoder_factory import EncoderFactory
from tvnet.models.annotations import ActionInstance, AnnotationSet
from tvnet.models.features import FeatureSequence
from tvnet.services.labeling import window_label_arrays
from tvnet.services.proposals import extract_candidates
from tvnet.services.synth import pack_intervals
from tvnet.services.vem import (
    VotingScores,
    WindowPredictions,
    WindowTrainingSet,
    accumulate_votes,
    build_window_training_set,
    create_vem,
    extract_windows,
    fuse_all_scales,
    fuse_window_scales,
    minmax_normalize,
    vem_forward,
    vem_train,
)

SMALL_VEM = VemConfig(conv_channels=4, hidden_size=4, kernel_size=3)


def naive_votes(window_starts, r_start, r_end, T, self_vote=False):
    v_start = np.zeros(T)
    v_end = np.zeros(T)
    J = r_start.shape[1]
    for n, first in enumerate(window_starts):
        for k in range(J):
            for j in range(J):
                if j > k:
                    sign = 1.0
                elif j < k:
                    sign = -1.0
                else:
                    sign = 1.0 if self_vote else 0.0
                v_start[first + k] += sign * r_start[n, j]
                v_end[first + k] -= sign * r_end[n, j]
    return v_start, v_end


def test_accumulation_matches_naive_loops():
    rng = np.random.default_rng(0)
    for trial in range(50):
        J = int(rng.integers(2, 21))
        T = int(rng.integers(J, 121))
        stride = int(rng.integers(1, 4))
        self_vote = trial % 5 == 0
        window_starts = np.arange(0, T - J + 1, stride)
        r_start = rng.uniform(-1, 1, size=(len(window_starts), J))
        r_end = rng.uniform(-1, 1, size=(len(window_starts), J))
        scores = accumulate_votes(WindowPredictions(window_starts, r_start, r_end), T, J, self_vote=self_vote)
        expected_start, expected_end = naive_votes(window_starts, r_start, r_end, T, self_vote)
        np.testing.assert_allclose(scores.v_start, expected_start, atol=1e-9)
        np.testing.assert_allclose(scores.v_end, expected_end, atol=1e-9)
        assert scores.window_lengths == (J,)
        assert not scores.normalized


def test_single_window_worked_example():
    a = 0.4
    preds = WindowPredictions(np.array([0]), np.array([[-a, 0.0, a]]), np.array([[a, 0.0, -a]]))
    scores = accumulate_votes(preds, T=3)
    np.testing.assert_allclose(scores.v_start, [a, 2 * a, a])
    np.testing.assert_allclose(scores.v_end, [a, 2 * a, a])
    with_self = accumulate_votes(preds, T=3, self_vote=True)
    np.testing.assert_allclose(with_self.v_start, [0.0, 2 * a, 2 * a])


def test_accumulation_shape_checks():
    preds = WindowPredictions(np.array([0, 1]), np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        accumulate_votes(preds, T=3)
    with pytest.raises(ShapeError):
        accumulate_votes(preds, T=10, J=5)


def argmax_near(values, center, radius):
    low = max(center - radius, 0)
    return low + int(np.argmax(values[low:center + radius + 1]))


@pytest.mark.parametrize("J", DATASET_PRESETS["synthetic"]["window_lengths"])
def test_perfect_predictions_peak_at_true_boundaries(J):
    synth = PipelineConfig.from_preset("synthetic").synth
    T = synth.T
    rng = np.random.default_rng(J)
    for index in range(100):
        intervals = pack_intervals(synth, rng)
        ann = AnnotationSet(f"v{index}", float(T), tuple(ActionInstance(float(s), float(e), "a") for s, e in intervals))
        window_starts, r_start, r_end, _ = window_label_arrays(ann, T, J)
        scores = accumulate_votes(WindowPredictions(window_starts, r_start, r_end), T, J).normalize()
        starts, ends = extract_candidates(scores.v_start, scores.v_end, xi=0.3)
        start_frames = np.array([candidate.index for candidate in starts])
        end_frames = np.array([candidate.index for candidate in ends])
        for start, end in intervals:
            assert np.min(np.abs(start_frames - start)) <= 1
            assert np.min(np.abs(end_frames - end)) <= 1
            assert abs(argmax_near(scores.v_start, start, J // 2) - start) <= 1
            assert abs(argmax_near(scores.v_end, end, J // 2) - end) <= 1


def test_minmax_normalize(caplog):
    np.testing.assert_allclose(minmax_normalize(np.array([2.0, 4.0, 3.0])), [0.0, 1.0, 0.5])
    with caplog.at_level(logging.WARNING):
        np.testing.assert_array_equal(minmax_normalize(np.full(4, 7.0)), np.zeros(4))
    assert "Constant" in caplog.text


def test_scale_fusion_modes():
    a = VotingScores(np.array([0.0, 2.0, 4.0]), np.array([1.0, 0.0, 1.0]), (15,))
    b = VotingScores(np.array([10.0, 0.0, 5.0]), np.array([0.0, 3.0, 6.0]), (5,))
    fused = fuse_window_scales(a, b)
    np.testing.assert_allclose(fused.v_start, [0.5, 0.25, 0.75])
    np.testing.assert_allclose(fused.v_end, [0.5, 0.25, 1.0])
    assert fused.window_lengths == (15, 5) and fused.normalized

    summed = fuse_window_scales(a, b, mode="sum")
    np.testing.assert_allclose(summed.v_start, [10.0, 2.0, 9.0])
    assert not summed.normalized

    single = fuse_all_scales([a])
    np.testing.assert_allclose(single.v_start, [0.0, 0.5, 1.0])
    three = fuse_all_scales([a, b, a])
    np.testing.assert_allclose(three.v_start, [(0.0 + 1.0 + 0.0) / 3, (0.5 + 0.0 + 0.5) / 3, (1.0 + 0.5 + 1.0) / 3])
    with pytest.raises(ShapeError):
        fuse_window_scales(a, VotingScores(np.zeros(4), np.zeros(4)))
    with pytest.raises(ValueError):
        fuse_all_scales([])


def test_extract_windows():
    data = np.arange(24, dtype=np.float64).reshape(8, 3)
    window_starts, windows = extract_windows(FeatureSequence("v", data), 4)
    assert windows.shape == (5, 3, 4)
    for n, first in enumerate(window_starts):
        np.testing.assert_array_equal(windows[n], data[first:first + 4].T)
    strided, _ = extract_windows(FeatureSequence("v", data), 4, stride=3)
    np.testing.assert_array_equal(strided, [0, 3])
    with pytest.raises(ShapeError):
        extract_windows(FeatureSequence("v", data), 9)


@pytest.mark.parametrize("kind", ["lstm", "srf", "sll"])
def test_encoders_map_windows_to_bounded_distances(kind):
    rng = np.random.default_rng(1)
    encoder = EncoderFactory.create_encoder(kind, 6, 3, SMALL_VEM, rng)
    out = encoder(Tensor(rng.normal(size=(4, 3, 6))))
    assert out.shape == (4, 6)
    assert np.all(np.abs(out.data) < 1.0)
    with pytest.raises(ShapeError):
        encoder(Tensor(rng.normal(size=(4, 3, 5))))


def test_unknown_encoder_kind():
    with pytest.raises(ConfigError, match="Unknown encoder"):
        EncoderFactory.create_encoder("gru", 6, 3, SMALL_VEM, np.random.default_rng(0))


def test_encoders_are_window_independent():
    rng = np.random.default_rng(2)
    encoder = EncoderFactory.create_encoder("lstm", 5, 2, SMALL_VEM, rng)
    windows = rng.normal(size=(3, 2, 5))
    together = encoder(Tensor(windows)).data
    for n in range(3):
        np.testing.assert_allclose(encoder(Tensor(windows[n:n + 1])).data[0], together[n], rtol=1e-12, atol=1e-14)


def test_vem_forward_and_initialisation():
    features = FeatureSequence("v", np.random.default_rng(3).normal(size=(20, 4)))
    model = create_vem(5, 4, SMALL_VEM, seed=7)
    preds = vem_forward(model, features)
    assert preds.r_start.shape == (16, 5) and preds.r_end.shape == (16, 5)
    assert preds.window_length == 5
    again = create_vem(5, 4, SMALL_VEM, seed=7)
    np.testing.assert_array_equal(vem_forward(again, features).r_start, preds.r_start)
    assert create_vem(5, 4, SMALL_VEM, seed=7, dtype=np.float32).dtype == np.float32
    with pytest.raises(ShapeError):
        vem_forward(create_vem(5, 3, SMALL_VEM, seed=7), features)


def test_window_training_set_weights_empty_videos():
    features = [FeatureSequence("a", np.zeros((10, 2))), FeatureSequence("b", np.zeros((10, 2)))]
    annotations = [
        AnnotationSet("a", 10.0, (ActionInstance(2.0, 6.0, "x"),)),
        AnnotationSet("b", 10.0, ()),
    ]
    training_set = build_window_training_set(features, annotations, J=4, empty_video_weight=0.1)
    assert len(training_set) == 14
    assert training_set.windows.shape == (14, 2, 4)
    np.testing.assert_array_equal(training_set.weights, [1.0] * 7 + [0.1] * 7)
    np.testing.assert_array_equal(training_set.r_start[7:], np.ones((7, 4)))
    with pytest.raises(ValueError):
        build_window_training_set([], [], J=4)


def test_zero_targets_drive_predictions_to_zero():
    rng = np.random.default_rng(4)
    windows = rng.normal(size=(64, 3, 5))
    training_set = WindowTrainingSet(windows, np.zeros((64, 5)), np.zeros((64, 5)), np.ones(64))
    config = SMALL_VEM.model_copy(update={
        "schedule": StageSchedule(epochs=200, batch_size=64, boundaries=[], rates=[1e-2]),
    })
    model = create_vem(5, 3, config, seed=0)
    results = vem_train(model, training_set, config, seed=0)
    assert set(results) == {"start", "end"}
    assert results["start"].losses[-1] < results["start"].losses[0]
    assert np.mean(np.abs(model.start(Tensor(windows)).data)) < 0.05
    assert np.mean(np.abs(model.end(Tensor(windows)).data)) < 0.05
