"""
Tests for candidate extraction, pairing, confidence fusion, Soft-NMS and class assignment
"""

import sys
import os

# Make the tvnet package importable when run from anywhere
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import logging

import numpy as np
import pandas as pd
import pytest

from tvnet.models.annotations import UNKNOWN_LABEL, AnnotationSet, PredictionSet, Proposal, VideoClass
from tvnet.services.proposals import (
    END,
    START,
    CandidateBoundary,
    ScoredProposal,
    assign_classes,
    deduplicate,
    extract_candidates,
    find_local_maxima,
    fuse_confidence,
    pair_proposals,
    save_candidates,
    soft_nms,
    to_prediction_set,
)


def reference_soft_nms(items, sigma, top_k):
    """items: list of (start, end, score)"""
    remaining = [list(item) for item in items]
    selected = []
    while remaining and len(selected) < top_k:
        best = max(range(len(remaining)), key=lambda i: (remaining[i][2], -i))
        start, end, score = remaining.pop(best)
        selected.append((start, end, score))
        for item in remaining:
            intersection = max(0.0, min(end, item[1]) - max(start, item[0]))
            union = (end - start) + (item[1] - item[0]) - intersection
            iou = intersection / union if union > 0 else 0.0
            item[2] *= np.exp(-iou * iou / sigma)
    return selected


def test_local_maxima():
    np.testing.assert_array_equal(find_local_maxima(np.array([0, 1, 0, 1, 0]), 0.5), [1, 3])
    np.testing.assert_array_equal(find_local_maxima(np.linspace(0, 1, 6), 0.3), [5])
    np.testing.assert_array_equal(find_local_maxima(np.array([0.9, 0.2, 0.1]), 0.3), [0])
    # a flat top counts once, at its left end
    np.testing.assert_array_equal(find_local_maxima(np.array([0.0, 0.8, 0.8, 0.8, 0.1]), 0.3), [1])
    np.testing.assert_array_equal(find_local_maxima(np.array([0.0, 0.2, 0.0]), 0.3), [])
    assert len(find_local_maxima(np.zeros(0), 0.3)) == 0


def test_candidates_invariant_under_positive_affine_rescaling():
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.random(60)
        scaled = 3.7 * v + 1.25
        normalized = (v - v.min()) / (v.max() - v.min())
        renormalized = (scaled - scaled.min()) / (scaled.max() - scaled.min())
        starts, _ = extract_candidates(normalized, normalized, 0.3)
        again, _ = extract_candidates(renormalized, renormalized, 0.3)
        assert [c.index for c in starts] == [c.index for c in again]
        # with no threshold only the ordering matters
        monotone, _ = extract_candidates(np.exp(5 * v), np.exp(5 * v), 0.0)
        plain, _ = extract_candidates(v, v, 0.0)
        assert [c.index for c in monotone] == [c.index for c in plain]


def test_extract_candidates_records_scores():
    v_start = np.array([0.0, 1.0, 0.2, 0.6, 0.1])
    v_end = np.array([0.1, 0.0, 0.5, 0.0, 1.0])
    b = np.array([0.9, 0.8, 0.7, 0.6, 0.5])
    starts, ends = extract_candidates(v_start, v_end, 0.3, b_start=b, b_end=b)
    assert starts == [CandidateBoundary(1, START, 1.0, 0.8), CandidateBoundary(3, START, 0.6, 0.6)]
    assert ends == [CandidateBoundary(2, END, 0.5, 0.7), CandidateBoundary(4, END, 1.0, 0.5)]


def test_pairing_respects_order_and_max_duration():
    assert pair_proposals([10], [50, 200], tau=100) == [(10, 50)]
    assert pair_proposals([10, 60], [10, 50, 70], tau=100) == [(10, 50), (10, 70), (60, 70)]
    # the limit is inclusive
    assert pair_proposals([0], [5], tau=5) == [(0, 5)]
    assert pair_proposals([], [5], tau=5) == []
    candidates = [CandidateBoundary(3, START, 1.0), CandidateBoundary(1, START, 0.5)]
    assert pair_proposals(candidates, [CandidateBoundary(4, END, 1.0)], tau=10) == [(1, 4), (3, 4)]


def test_fused_confidence_arithmetic():
    half = np.full(10, 0.5)
    proposal = fuse_confidence((2, 7), half, half, half, half, p=1.0, alpha=0.6)
    assert proposal.score == pytest.approx(0.64)
    assert (proposal.start, proposal.end) == (2, 7)
    assert proposal.v_start == 0.5 and proposal.b_end == 0.5

    v = np.linspace(0, 0.9, 10)
    b = np.linspace(1, 0.1, 10)
    full = fuse_confidence((1, 8), v, v, b, b, p=0.5, alpha=0.3)
    assert full.score == pytest.approx((0.1 + 0.3 * 0.9) * (0.8 + 0.3 * 0.2) * 0.5)
    voting_only = fuse_confidence((1, 8), v, v, b, b, p=0.5, alpha=0.3, use_boundary=False)
    assert voting_only.score == pytest.approx(0.1 * 0.8 * 0.5)
    boundary_only = fuse_confidence((1, 8), v, v, b, b, p=0.5, alpha=0.3, use_voting=False)
    assert boundary_only.score == pytest.approx(0.9 * 0.2 * 0.5)


def test_fused_confidence_is_never_negative():
    v = np.array([0.0, 0.5])
    proposal = fuse_confidence((0, 1), v, v, np.zeros(2), np.zeros(2), p=0.0, alpha=0.6)
    assert proposal.score == 0.0


def test_deduplicate_keeps_best_copy():
    kept = deduplicate([
        ScoredProposal(1, 5, 0.3),
        ScoredProposal(2, 6, 0.4),
        ScoredProposal(1, 5, 0.9),
        ScoredProposal(1, 5, 0.2),
    ])
    assert [(p.start, p.end, p.score) for p in kept] == [(1, 5, 0.9), (2, 6, 0.4)]


def test_soft_nms_matches_reference():
    rng = np.random.default_rng(1)
    for size in (1, 5, 50, 300, 1000):
        starts = rng.integers(0, 900, size=size)
        lengths = rng.integers(1, 100, size=size)
        scores = rng.random(size)
        items = [(float(s), float(s + l), float(score)) for s, l, score in zip(starts, lengths, scores)]
        proposals = [ScoredProposal(int(s), int(e), score) for s, e, score in items]
        top_k = min(size, 200)
        result = soft_nms(proposals, sigma=0.5, top_k=top_k)
        expected = reference_soft_nms(items, 0.5, top_k)
        assert len(result) == len(expected) == top_k
        np.testing.assert_allclose([p.score for p in result], [score for _, _, score in expected], rtol=1e-12)
        assert [(p.start, p.end) for p in result] == [(int(s), int(e)) for s, e, _ in expected]


def test_soft_nms_decay_values():
    duplicate = soft_nms([ScoredProposal(0, 10, 1.0), ScoredProposal(0, 10, 1.0)], sigma=0.5)
    assert duplicate[0].score == 1.0
    assert duplicate[1].score == pytest.approx(np.exp(-2.0))
    disjoint = soft_nms([ScoredProposal(0, 10, 0.4), ScoredProposal(20, 30, 0.9)], sigma=0.5)
    assert [(p.start, p.score) for p in disjoint] == [(20, 0.9), (0, 0.4)]
    assert len(soft_nms([ScoredProposal(i, i + 1, 0.5) for i in range(10)], top_k=3)) == 3
    assert soft_nms([]) == []


def test_soft_nms_ties_take_earliest():
    result = soft_nms([ScoredProposal(50, 60, 0.5), ScoredProposal(0, 10, 0.5)])
    assert (result[0].start, result[1].start) == (50, 0)


def test_prediction_set_conversion():
    preds = to_prediction_set("v", [ScoredProposal(10, 20, 0.8), ScoredProposal(30, 45, 0.5)], 0.5)
    assert [(p.start, p.end, p.score, p.label) for p in preds.proposals] == [
        (5.0, 10.0, 0.8, UNKNOWN_LABEL), (15.0, 22.5, 0.5, UNKNOWN_LABEL)
    ]
    empty = to_prediction_set("v", soft_nms([]), 1.0)
    assert len(empty) == 0
    assert len(assign_classes(empty, AnnotationSet("v", 10.0, (), (VideoClass("a", 1.0),)))) == 0


def test_class_assignment_scales_scores():
    preds = PredictionSet("v", [Proposal(1.0, 2.0, 0.5)])
    ann = AnnotationSet("v", 10.0, (), (VideoClass("a", 0.8), VideoClass("b", 0.2)))
    top_one = assign_classes(preds, ann, top_c=1)
    assert [(p.label, p.score) for p in top_one.proposals] == [("a", pytest.approx(0.4))]
    top_two = assign_classes(preds, ann, top_c=2)
    assert len(top_two) == 2
    assert [(p.label, p.score) for p in top_two.proposals] == [("a", pytest.approx(0.4)), ("b", pytest.approx(0.1))]


def test_class_assignment_without_classes(caplog):
    preds = PredictionSet("v", [Proposal(1.0, 2.0, 0.5, "x")])
    with caplog.at_level(logging.WARNING):
        labelled = assign_classes(preds, AnnotationSet("v", 10.0), top_c=1)
    assert [(p.label, p.score) for p in labelled.proposals] == [(UNKNOWN_LABEL, 0.5)]
    assert "No video classes" in caplog.text
    assert assign_classes(preds, None).proposals[0].label == UNKNOWN_LABEL


def test_candidate_csv(tmp_path):
    starts = [CandidateBoundary(5, START, 1.0, 0.25)]
    ends = [CandidateBoundary(5, END, 0.5, 0.75), CandidateBoundary(2, END, 0.4, 0.0)]
    frame = pd.read_csv(save_candidates(tmp_path / "candidates" / "v.csv", starts, ends))
    assert list(frame.columns) == ["t", "kind", "v", "b"]
    assert frame["t"].tolist() == [2, 5, 5]
    assert frame["kind"].tolist() == [END, END, START]
