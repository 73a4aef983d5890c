"""
TVNet - Dataset Directory Layout

A dataset directory holds annotations.json (every video, with a "subset"
field naming its split) and features/<video_id>.tvnf (or .csv).
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Union

import numpy as np

from tvnet.config.settings import DATA_SPLITS
from tvnet.core.errors import ConfigError, FeatureFormatError
from tvnet.models.annotations import AnnotationSet, load_annotations, save_annotations
from tvnet.models.features import FeatureSequence, load_features, save_features

logger = logging.getLogger(__name__)

ANNOTATION_FILE = "annotations.json"
FEATURE_DIR = "features"


@dataclass(frozen=True)
class VideoSample:
    """Annotation and features of one video, on the pipeline's T-step grid"""

    annotation: AnnotationSet
    features: FeatureSequence

    @property
    def video_id(self) -> str:
        return self.annotation.video_id

    @property
    def T(self) -> int:
        return self.features.T


class VideoDataset:
    """Ordered collection of video samples from one split"""

    def __init__(self, samples: List[VideoSample], split: Optional[str] = None):
        self.samples = list(samples)
        self.split = split

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[VideoSample]:
        return iter(self.samples)

    def __getitem__(self, index: int) -> VideoSample:
        return self.samples[index]

    @property
    def annotations(self) -> Dict[str, AnnotationSet]:
        return {sample.video_id: sample.annotation for sample in self.samples}

    @classmethod
    def load(
        cls,
        root: Union[str, Path],
        split: Optional[str] = None,
        T: Optional[int] = None,
        C: Optional[int] = None,
        rescale: bool = True,
        dtype: str = "float64",
    ) -> "VideoDataset":
        """
        Load one split of a dataset directory

        Args:
            root: Dataset directory
            split: "train"/"test" (or the subset names); None loads every video
            T: Pipeline length; features are rescaled to it when rescale is set
            C: Required channel count
            rescale: Allow rescaling to T
            dtype: Array dtype of the loaded features

        Returns:
            VideoDataset: Samples in annotation-file order
        """
        root = Path(root)
        annotation_path = root / ANNOTATION_FILE
        if not annotation_path.exists():
            raise ConfigError(f"No dataset at {root}: {ANNOTATION_FILE} missing (run gen-data first)")
        subset = None
        if split is not None:
            if split not in DATA_SPLITS:
                raise ConfigError(f"Unknown split '{split}'. Options: {', '.join(DATA_SPLITS)}")
            subset = DATA_SPLITS[split]
        annotations = load_annotations(annotation_path, split=subset)

        samples = []
        for video_id, annotation in annotations.items():
            feature_path = _feature_path(root, video_id)
            features = load_features(
                feature_path, expected_T=T, expected_C=C, rescale=rescale,
                video_id=video_id, duration=annotation.duration,
            )
            features = features.with_data(features.data.astype(dtype))
            samples.append(VideoSample(annotation, features))
        logger.info(f"Loaded {len(samples)} videos from {root} (split={split or 'all'})")
        return cls(samples, split)


def _feature_path(root: Path, video_id: str) -> Path:
    for suffix in (".tvnf", ".csv"):
        candidate = root / FEATURE_DIR / f"{video_id}{suffix}"
        if candidate.exists():
            return candidate
    raise FeatureFormatError(f"No feature file for video '{video_id}' under {root / FEATURE_DIR}")


def save_dataset(
    root: Union[str, Path],
    annotations: Dict[str, AnnotationSet],
    features: Dict[str, FeatureSequence],
) -> Path:
    """Write annotations.json plus one TVNF file per video"""
    root = Path(root)
    missing = sorted(set(annotations) - set(features))
    if missing:
        raise ValueError(f"Features missing for videos: {', '.join(missing[:5])}")
    save_annotations(root / ANNOTATION_FILE, annotations)
    for video_id in annotations:
        save_features(root / FEATURE_DIR / f"{video_id}.tvnf", features[video_id])
    logger.info(f"Wrote {len(annotations)} videos to {root}")
    return root
