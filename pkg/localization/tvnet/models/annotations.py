"""
TVNet - Annotations and Predictions
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from tvnet.core.errors import AnnotationFormatError
from tvnet.models.features import seconds_to_index

logger = logging.getLogger(__name__)

UNKNOWN_LABEL = "unknown"


@dataclass(frozen=True)
class ActionInstance:
    """One ground-truth action: start and end in seconds plus a class label"""

    start: float
    end: float
    label: str

    @property
    def duration(self) -> float:
        return self.end - self.start

    def to_dict(self) -> Dict[str, Any]:
        return {"segment": [self.start, self.end], "label": self.label}


@dataclass(frozen=True)
class VideoClass:
    label: str
    score: float

    def to_dict(self) -> Dict[str, Any]:
        return {"label": self.label, "score": self.score}


@dataclass(frozen=True)
class AnnotationSet:
    """
    Ground truth of one video

    Attributes:
        video_id: Video identifier
        duration: Video length in seconds
        instances: Action instances, 0 <= start < end <= duration
        video_classes: Video-level classes ranked by score
        subset: Optional split name ("training", "testing", ...)
    """

    video_id: str
    duration: float
    instances: Tuple[ActionInstance, ...] = ()
    video_classes: Tuple[VideoClass, ...] = ()
    subset: Optional[str] = None

    @property
    def K(self) -> int:
        return len(self.instances)

    def frame_rate_ratio(self, T: int) -> float:
        return self.duration / T

    def frame_intervals(self, T: int) -> List[Tuple[int, int]]:
        """Instances as (start, end) feature-step indices on a length-T grid"""
        ratio = self.frame_rate_ratio(T)
        return [
            (seconds_to_index(instance.start, ratio, T), seconds_to_index(instance.end, ratio, T))
            for instance in self.instances
        ]

    def top_classes(self, top_c: int) -> List[VideoClass]:
        ranked = sorted(self.video_classes, key=lambda item: -item.score)
        return ranked[:top_c]

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "duration": self.duration,
            "annotations": [instance.to_dict() for instance in self.instances],
            "video_classes": [item.to_dict() for item in self.video_classes],
        }
        if self.subset is not None:
            data["subset"] = self.subset
        return data

    @classmethod
    def from_dict(cls, video_id: str, data: Dict[str, Any], path: str = "<memory>") -> "AnnotationSet":
        """
        Validate and build an AnnotationSet

        Instances with start >= end are skipped and ends past the duration are
        clamped, both with a warning.

        Raises:
            AnnotationFormatError: On missing or mistyped fields
        """
        context = f"video '{video_id}'"
        if not isinstance(data, dict):
            raise AnnotationFormatError(path, context, "entry must be an object")
        duration = _number(data.get("duration"), path, f"{context} field 'duration'")
        if duration <= 0:
            raise AnnotationFormatError(path, f"{context} field 'duration'", f"must be positive, got {duration}")

        raw_instances = data.get("annotations", [])
        if not isinstance(raw_instances, list):
            raise AnnotationFormatError(path, f"{context} field 'annotations'", "must be a list")
        instances = []
        for index, item in enumerate(raw_instances):
            where = f"{context} annotation {index}"
            if not isinstance(item, dict):
                raise AnnotationFormatError(path, where, "must be an object")
            segment = item.get("segment")
            if not isinstance(segment, (list, tuple)) or len(segment) != 2:
                raise AnnotationFormatError(path, f"{where} field 'segment'", "must be [start, end]")
            start = _number(segment[0], path, f"{where} field 'segment[0]'")
            end = _number(segment[1], path, f"{where} field 'segment[1]'")
            label = item.get("label")
            if not isinstance(label, str) or not label:
                raise AnnotationFormatError(path, f"{where} field 'label'", "must be a non-empty string")
            if start < 0:
                logger.warning(f"{path}: {where}: start {start} < 0, clamped to 0")
                start = 0.0
            if end > duration:
                logger.warning(f"{path}: {where}: end {end} > duration {duration}, clamped")
                end = duration
            if start >= end:
                logger.warning(f"{path}: {where}: start {start} >= end {end}, skipped")
                continue
            instances.append(ActionInstance(start, end, label))

        raw_classes = data.get("video_classes", [])
        if not isinstance(raw_classes, list):
            raise AnnotationFormatError(path, f"{context} field 'video_classes'", "must be a list")
        classes = []
        for index, item in enumerate(raw_classes):
            where = f"{context} video_classes {index}"
            if not isinstance(item, dict) or not isinstance(item.get("label"), str):
                raise AnnotationFormatError(path, where, "must be an object with a string 'label'")
            classes.append(VideoClass(item["label"], _number(item.get("score", 1.0), path, f"{where} field 'score'")))

        subset = data.get("subset")
        if subset is not None and not isinstance(subset, str):
            raise AnnotationFormatError(path, f"{context} field 'subset'", "must be a string")
        instances.sort(key=lambda instance: (instance.start, instance.end))
        return cls(video_id, duration, tuple(instances), tuple(classes), subset)


@dataclass(frozen=True)
class Proposal:
    """A scored, labelled segment in seconds"""

    start: float
    end: float
    score: float
    label: str = UNKNOWN_LABEL

    def to_dict(self) -> Dict[str, Any]:
        return {"segment": [self.start, self.end], "score": self.score, "label": self.label}


@dataclass
class PredictionSet:
    """Proposals of one video, kept sorted by score, highest first"""

    video_id: str
    proposals: List[Proposal] = field(default_factory=list)

    def __post_init__(self):
        for proposal in self.proposals:
            if not proposal.start < proposal.end:
                raise ValueError(f"Proposal [{proposal.start}, {proposal.end}] in '{self.video_id}' has start >= end")
            if proposal.score < 0 or not np.isfinite(proposal.score):
                raise ValueError(f"Proposal score {proposal.score} in '{self.video_id}' must be finite and >= 0")
        # Stable: equal scores keep their order
        self.proposals = sorted(self.proposals, key=lambda proposal: -proposal.score)

    def __len__(self) -> int:
        return len(self.proposals)

    def to_list(self) -> List[Dict[str, Any]]:
        return [proposal.to_dict() for proposal in self.proposals]

    @classmethod
    def from_list(cls, video_id: str, items: List[Dict[str, Any]], path: str = "<memory>") -> "PredictionSet":
        if not isinstance(items, list):
            raise AnnotationFormatError(path, f"video '{video_id}'", "predictions must be a list")
        proposals = []
        for index, item in enumerate(items):
            where = f"video '{video_id}' prediction {index}"
            segment = item.get("segment") if isinstance(item, dict) else None
            if not isinstance(segment, (list, tuple)) or len(segment) != 2:
                raise AnnotationFormatError(path, f"{where} field 'segment'", "must be [start, end]")
            start = _number(segment[0], path, f"{where} field 'segment[0]'")
            end = _number(segment[1], path, f"{where} field 'segment[1]'")
            score = _number(item.get("score"), path, f"{where} field 'score'")
            if start >= end:
                raise AnnotationFormatError(path, f"{where} field 'segment'", f"start {start} >= end {end}")
            if score < 0:
                raise AnnotationFormatError(path, f"{where} field 'score'", f"must be >= 0, got {score}")
            proposals.append(Proposal(start, end, score, str(item.get("label", UNKNOWN_LABEL))))
        return cls(video_id, proposals)


def _number(value: Any, path: str, context: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise AnnotationFormatError(path, context, f"expected a number, got {value!r}")
    if not np.isfinite(value):
        raise AnnotationFormatError(path, context, f"must be finite, got {value}")
    return float(value)


def _read_json(path: Path) -> Any:
    if not path.exists():
        raise AnnotationFormatError(str(path), "file", "not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise AnnotationFormatError(str(path), f"line {e.lineno} column {e.colno}", e.msg) from e


def load_annotations(path: Union[str, Path], split: Optional[str] = None) -> Dict[str, AnnotationSet]:
    """
    Load an annotation JSON file

    Accepts {video_id: {...}} or the benchmark wrapper {"database": {video_id: {...}}}.

    Args:
        path: JSON file
        split: Keep only videos whose subset matches

    Returns:
        Dict[str, AnnotationSet]: Annotations keyed by video id, in file order
    """
    path = Path(path)
    raw = _read_json(path)
    if isinstance(raw, dict) and isinstance(raw.get("database"), dict):
        raw = raw["database"]
    if not isinstance(raw, dict):
        raise AnnotationFormatError(str(path), "top level", "must be an object keyed by video id")
    annotations = {}
    for video_id, data in raw.items():
        annotation = AnnotationSet.from_dict(video_id, data, str(path))
        if split is not None and annotation.subset != split:
            continue
        annotations[video_id] = annotation
    logger.info(f"Loaded {len(annotations)} annotated videos from {path}")
    return annotations


def save_annotations(path: Union[str, Path], annotations: Dict[str, AnnotationSet]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {video_id: annotation.to_dict() for video_id, annotation in annotations.items()}
    path.write_text(json.dumps(payload, indent=2))
    return path


def load_predictions(path: Union[str, Path]) -> Dict[str, PredictionSet]:
    """Load a prediction JSON file ({video_id: [...]} or {"results": {video_id: [...]}})"""
    path = Path(path)
    raw = _read_json(path)
    if isinstance(raw, dict) and isinstance(raw.get("results"), dict):
        raw = raw["results"]
    if not isinstance(raw, dict):
        raise AnnotationFormatError(str(path), "top level", "must be an object keyed by video id")
    return {video_id: PredictionSet.from_list(video_id, items, str(path)) for video_id, items in raw.items()}


def save_predictions(path: Union[str, Path], predictions: Dict[str, PredictionSet]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {video_id: prediction.to_list() for video_id, prediction in predictions.items()}
    path.write_text(json.dumps(payload, indent=2))
    return path
