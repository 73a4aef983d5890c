"""
TVNet - Proposal Generation

Candidate boundaries, start/end pairing, confidence fusion, Soft-NMS and
class assignment.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from tvnet.models.annotations import UNKNOWN_LABEL, AnnotationSet, PredictionSet, Proposal
from tvnet.models.features import index_to_seconds

logger = logging.getLogger(__name__)

START = "start"
END = "end"


@dataclass(frozen=True)
class CandidateBoundary:
    index: int
    kind: str
    v: float
    b: float = 0.0


@dataclass(frozen=True)
class ScoredProposal:
    """
    A start/end pair with its fused confidence

    score = (v_start + alpha * b_start) * (v_end + alpha * b_end) * p
    """

    start: int
    end: int
    score: float
    v_start: float = 0.0
    v_end: float = 0.0
    b_start: float = 0.0
    b_end: float = 0.0
    p: float = 1.0

    def with_score(self, score: float) -> "ScoredProposal":
        return replace(self, score=score)


def find_local_maxima(values: np.ndarray, xi: float) -> np.ndarray:
    """
    Indices t with values[t] >= xi and values[t] >= both neighbours

    The sequence ends compare with their single neighbour. A run of equal
    qualifying values contributes only its leftmost index.
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return np.zeros(0, dtype=int)
    previous = np.concatenate([[-np.inf], values[:-1]])
    following = np.concatenate([values[1:], [-np.inf]])
    mask = (values >= xi) & (values >= previous) & (values >= following)
    plateau_tail = np.zeros_like(mask)
    plateau_tail[1:] = mask[1:] & mask[:-1] & (values[1:] == values[:-1])
    return np.flatnonzero(mask & ~plateau_tail)


def extract_candidates(v_start: np.ndarray, v_end: np.ndarray, xi: float,
                       b_start: Optional[np.ndarray] = None,
                       b_end: Optional[np.ndarray] = None) -> Tuple[List[CandidateBoundary], List[CandidateBoundary]]:
    """
    Candidate start and end frames from normalized scores

    Args:
        v_start: Start scores, min-max normalized to [0, 1]
        v_end: End scores, normalized likewise
        xi: Threshold in [0, 1)
        b_start: Optional naive start scores recorded on the candidates
        b_end: Optional naive end scores

    Returns:
        Tuple: start candidates and end candidates, each sorted by index
    """
    b_start = np.zeros(len(v_start)) if b_start is None else b_start
    b_end = np.zeros(len(v_end)) if b_end is None else b_end
    starts = [CandidateBoundary(int(t), START, float(v_start[t]), float(b_start[t]))
              for t in find_local_maxima(v_start, xi)]
    ends = [CandidateBoundary(int(t), END, float(v_end[t]), float(b_end[t]))
            for t in find_local_maxima(v_end, xi)]
    return starts, ends


def pair_proposals(starts: Sequence[Union[int, CandidateBoundary]], ends: Sequence[Union[int, CandidateBoundary]],
                   tau: int) -> List[Tuple[int, int]]:
    """Every (start, end) with start < end and end - start <= tau"""
    start_indices = sorted(item.index if isinstance(item, CandidateBoundary) else int(item) for item in starts)
    end_indices = np.array(sorted(item.index if isinstance(item, CandidateBoundary) else int(item) for item in ends),
                           dtype=int)
    pairs = []
    for start in start_indices:
        lo = np.searchsorted(end_indices, start, side="right")
        hi = np.searchsorted(end_indices, start + tau, side="right")
        pairs.extend((start, int(end)) for end in end_indices[lo:hi])
    return pairs


def fuse_confidence(pair: Tuple[int, int], v_start: np.ndarray, v_end: np.ndarray,
                    b_start: np.ndarray, b_end: np.ndarray, p: float, alpha: float,
                    use_voting: bool = True, use_boundary: bool = True) -> ScoredProposal:
    """
    Confidence of one pair

    (v_s + alpha * b_s) * (v_e + alpha * b_e) * p; with use_voting off the v
    terms are dropped and with use_boundary off the b terms.
    """
    start, end = pair
    vs, ve = float(v_start[start]), float(v_end[end])
    bs, be = float(b_start[start]), float(b_end[end])
    start_term = (vs if use_voting else 0.0) + ((alpha if use_voting else 1.0) * bs if use_boundary else 0.0)
    end_term = (ve if use_voting else 0.0) + ((alpha if use_voting else 1.0) * be if use_boundary else 0.0)
    score = max(start_term * end_term * float(p), 0.0)
    return ScoredProposal(start, end, score, vs, ve, bs, be, float(p))


def deduplicate(proposals: Sequence[ScoredProposal]) -> List[ScoredProposal]:
    """Keep the highest-scoring copy of each (start, end), in first-seen order"""
    best: Dict[Tuple[int, int], ScoredProposal] = {}
    for proposal in proposals:
        key = (proposal.start, proposal.end)
        if key not in best or proposal.score > best[key].score:
            best[key] = proposal
    return list(best.values())


def interval_iou(start: float, end: float, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    intersection = np.clip(np.minimum(end, ends) - np.maximum(start, starts), 0.0, None)
    union = (end - start) + (ends - starts) - intersection
    return np.divide(intersection, union, out=np.zeros_like(intersection), where=union > 0)


def soft_nms(proposals: Sequence[ScoredProposal], sigma: float = 0.5, top_k: int = 200) -> List[ScoredProposal]:
    """
    Gaussian Soft-NMS

    Repeatedly takes the highest remaining score (earliest on ties) and
    multiplies every other remaining score by exp(-IoU^2 / sigma).

    Args:
        proposals: Scored proposals
        sigma: Decay width
        top_k: Maximum number of selections

    Returns:
        List[ScoredProposal]: Selected proposals with decayed scores, highest first
    """
    if not proposals:
        return []
    starts = np.array([proposal.start for proposal in proposals], dtype=np.float64)
    ends = np.array([proposal.end for proposal in proposals], dtype=np.float64)
    scores = np.array([proposal.score for proposal in proposals], dtype=np.float64)
    remaining = np.ones(len(proposals), dtype=bool)
    selected = []
    while remaining.any() and len(selected) < top_k:
        candidates = np.flatnonzero(remaining)
        best = candidates[np.argmax(scores[candidates])]
        selected.append(proposals[best].with_score(float(scores[best])))
        remaining[best] = False
        others = np.flatnonzero(remaining)
        if len(others):
            iou = interval_iou(starts[best], ends[best], starts[others], ends[others])
            scores[others] = scores[others] * np.exp(-(iou * iou) / sigma)
    return selected


def to_prediction_set(video_id: str, proposals: Sequence[ScoredProposal], frame_rate_ratio: float) -> PredictionSet:
    """Convert frame-index proposals to seconds"""
    return PredictionSet(video_id, [
        Proposal(index_to_seconds(proposal.start, frame_rate_ratio), index_to_seconds(proposal.end, frame_rate_ratio),
                 proposal.score)
        for proposal in proposals
    ])


def assign_classes(preds: PredictionSet, ann: Optional[AnnotationSet], top_c: int = 1) -> PredictionSet:
    """
    Copy every proposal once per top-c video class, scaling the score by the class score

    Without video classes the proposals keep their score and get the label "unknown".
    """
    classes = ann.top_classes(top_c) if ann is not None else []
    if not classes:
        logger.warning(f"No video classes for '{preds.video_id}'; proposals labelled '{UNKNOWN_LABEL}'")
        return PredictionSet(preds.video_id, [replace(proposal, label=UNKNOWN_LABEL) for proposal in preds.proposals])
    labelled = [
        Proposal(proposal.start, proposal.end, proposal.score * video_class.score, video_class.label)
        for proposal in preds.proposals
        for video_class in classes
    ]
    return PredictionSet(preds.video_id, labelled)


def candidate_frame(starts: Sequence[CandidateBoundary], ends: Sequence[CandidateBoundary]) -> pd.DataFrame:
    rows = [(item.index, item.kind, item.v, item.b) for item in list(starts) + list(ends)]
    frame = pd.DataFrame(rows, columns=["t", "kind", "v", "b"])
    return frame.sort_values(["t", "kind"], kind="mergesort").reset_index(drop=True)


def save_candidates(path: Union[str, Path], starts: Sequence[CandidateBoundary],
                    ends: Sequence[CandidateBoundary]) -> Path:
    """CSV of the candidate boundaries of one video: t, kind, v, b"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    candidate_frame(starts, ends).to_csv(path, index=False, float_format="%.6g")
    return path
