"""
TVNet - Detection Evaluation (mAP at temporal IoU thresholds)
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from tvnet.config.settings import AVERAGE_MAP_THRESHOLDS
from tvnet.models.annotations import AnnotationSet, PredictionSet

logger = logging.getLogger(__name__)


def temporal_iou(a: Sequence[float], b: Sequence[float]) -> float:
    """
    Intersection over union of two intervals

    A degenerate interval (end <= start) has IoU 0 with everything.
    """
    a_start, a_end = float(a[0]), float(a[1])
    b_start, b_end = float(b[0]), float(b[1])
    if a_end <= a_start or b_end <= b_start:
        return 0.0
    intersection = max(0.0, min(a_end, b_end) - max(a_start, b_start))
    union = (a_end - a_start) + (b_end - b_start) - intersection
    return intersection / union


def segment_iou(segment: Sequence[float], candidates: np.ndarray) -> np.ndarray:
    """IoU between one interval and each row of an (N, 2) array"""
    candidates = np.asarray(candidates, dtype=np.float64).reshape(-1, 2)
    start, end = float(segment[0]), float(segment[1])
    if end <= start or len(candidates) == 0:
        return np.zeros(len(candidates))
    intersection = np.clip(np.minimum(end, candidates[:, 1]) - np.maximum(start, candidates[:, 0]), 0.0, None)
    union = (end - start) + (candidates[:, 1] - candidates[:, 0]) - intersection
    valid = (candidates[:, 1] > candidates[:, 0]) & (union > 0)
    iou = np.zeros(len(candidates))
    iou[valid] = intersection[valid] / union[valid]
    return iou


def interpolated_precision_recall(precision: np.ndarray, recall: np.ndarray) -> float:
    """Area under the monotone precision envelope (all-point interpolation)"""
    mprec = np.hstack([[0.0], precision, [0.0]])
    mrec = np.hstack([[0.0], recall, [1.0]])
    for i in range(len(mprec) - 2, -1, -1):
        mprec[i] = max(mprec[i], mprec[i + 1])
    changes = np.where(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[changes] - mrec[changes - 1]) * mprec[changes]))


def average_precision(ground_truth: pd.DataFrame, prediction: pd.DataFrame, thresholds: Sequence[float]) -> np.ndarray:
    """
    AP of one class at each IoU threshold

    Predictions are matched greedily in descending score order; each one takes
    the highest-IoU ground truth not yet matched at that threshold.

    Args:
        ground_truth: Rows with video-id, t-start, t-end
        prediction: Rows with video-id, t-start, t-end, score

    Returns:
        np.ndarray: AP per threshold
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    ap = np.zeros(len(thresholds))
    npos = float(len(ground_truth))
    if prediction.empty or npos == 0:
        return ap

    # Stable sort keeps file order among equal scores
    order = np.argsort(-prediction["score"].to_numpy(), kind="mergesort")
    prediction = prediction.iloc[order].reset_index(drop=True)
    ground_truth = ground_truth.reset_index(drop=True)
    gt_by_video = {video_id: group for video_id, group in ground_truth.groupby("video-id", sort=False)}

    lock_gt = np.full((len(thresholds), len(ground_truth)), -1)
    tp = np.zeros((len(thresholds), len(prediction)))
    fp = np.zeros((len(thresholds), len(prediction)))
    for idx, row in enumerate(prediction.itertuples(index=False)):
        video_gt = gt_by_video.get(row[0])
        if video_gt is None:
            fp[:, idx] = 1
            continue
        iou = segment_iou((row[1], row[2]), video_gt[["t-start", "t-end"]].to_numpy())
        gt_index = video_gt.index.to_numpy()
        iou_order = np.argsort(-iou, kind="mergesort")
        for tidx, threshold in enumerate(thresholds):
            for jdx in iou_order:
                if iou[jdx] < threshold:
                    break
                if lock_gt[tidx, gt_index[jdx]] >= 0:
                    continue
                tp[tidx, idx] = 1
                lock_gt[tidx, gt_index[jdx]] = idx
                break
            if tp[tidx, idx] == 0:
                fp[tidx, idx] = 1

    tp_cumsum = np.cumsum(tp, axis=1)
    fp_cumsum = np.cumsum(fp, axis=1)
    recall = tp_cumsum / npos
    precision = tp_cumsum / (tp_cumsum + fp_cumsum)
    for tidx in range(len(thresholds)):
        ap[tidx] = interpolated_precision_recall(precision[tidx], recall[tidx])
    return ap


@dataclass
class EvalReport:
    """
    mAP report

    Attributes:
        thresholds: Requested IoU thresholds
        map_by_threshold: mAP per requested threshold (None when there is no ground truth)
        average_map: Mean of the mAPs over 0.5:0.05:0.95
        ap_by_class: AP per class, one value per requested threshold
        num_predictions: Prediction count
        num_ground_truth: Ground-truth instance count
        empty: No ground truth at all; mAP is undefined
    """

    thresholds: List[float]
    map_by_threshold: Dict[float, Optional[float]] = field(default_factory=dict)
    average_map: Optional[float] = None
    ap_by_class: Dict[str, List[float]] = field(default_factory=dict)
    num_predictions: int = 0
    num_ground_truth: int = 0
    empty: bool = False

    def map_at(self, threshold: float) -> Optional[float]:
        return self.map_by_threshold[_threshold_key(threshold)]

    def to_dict(self) -> Dict:
        return {
            "thresholds": self.thresholds,
            "map": {f"{threshold:.2f}": value for threshold, value in self.map_by_threshold.items()},
            "average_map": self.average_map,
            "ap_by_class": self.ap_by_class,
            "num_predictions": self.num_predictions,
            "num_ground_truth": self.num_ground_truth,
            "empty": self.empty,
        }

    def table_row(self, name: str) -> Dict[str, Union[str, Optional[float]]]:
        """One row of a results table: name, one column per threshold, then Avg"""
        row: Dict[str, Union[str, Optional[float]]] = {"setting": name}
        for threshold, value in self.map_by_threshold.items():
            row[f"{threshold:.2f}"] = value
        row["Avg"] = self.average_map
        return row

    def save(self, out_dir: Union[str, Path], name: str = "eval") -> Tuple[Path, Path]:
        """Write <name>.json and a one-row <name>.csv table"""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / f"{name}.json"
        json_path.write_text(json.dumps(self.to_dict(), indent=2))
        csv_path = out_dir / f"{name}.csv"
        pd.DataFrame([self.table_row(name)]).to_csv(csv_path, index=False)
        logger.info(f"Wrote {json_path} and {csv_path}")
        return json_path, csv_path


def _threshold_key(threshold: float) -> float:
    return round(float(threshold), 4)


def _ground_truth_frame(annotations: Dict[str, AnnotationSet]) -> pd.DataFrame:
    rows = [
        (video_id, instance.start, instance.end, instance.label)
        for video_id, annotation in annotations.items()
        for instance in annotation.instances
    ]
    return pd.DataFrame(rows, columns=["video-id", "t-start", "t-end", "label"])


def _prediction_frame(predictions: Dict[str, PredictionSet], video_ids) -> pd.DataFrame:
    rows = [
        (video_id, proposal.start, proposal.end, proposal.score, proposal.label)
        for video_id, prediction in predictions.items()
        if video_id in video_ids
        for proposal in prediction.proposals
    ]
    return pd.DataFrame(rows, columns=["video-id", "t-start", "t-end", "score", "label"])


def compute_map(
    predictions: Dict[str, PredictionSet],
    annotations: Dict[str, AnnotationSet],
    thresholds: Sequence[float],
    jobs: int = 1,
) -> EvalReport:
    """
    Mean average precision over classes with ground truth

    Predictions for videos without annotations are ignored. Classes that only
    appear in predictions do not count towards the mean.

    Args:
        predictions: PredictionSet per video
        annotations: AnnotationSet per video
        thresholds: IoU thresholds to report
        jobs: Classes evaluated in parallel

    Returns:
        EvalReport: The report
    """
    thresholds = [float(threshold) for threshold in thresholds]
    all_thresholds = sorted({_threshold_key(t) for t in thresholds} | {_threshold_key(t) for t in AVERAGE_MAP_THRESHOLDS})
    ground_truth = _ground_truth_frame(annotations)
    prediction = _prediction_frame(predictions, set(annotations))
    report = EvalReport(
        thresholds=thresholds,
        num_predictions=len(prediction),
        num_ground_truth=len(ground_truth),
    )
    if ground_truth.empty:
        logger.warning("No ground-truth instances: mAP is undefined")
        report.empty = True
        report.map_by_threshold = {_threshold_key(t): None for t in thresholds}
        return report

    labels = sorted(ground_truth["label"].unique())
    gt_by_label = {label: group for label, group in ground_truth.groupby("label")}
    pred_by_label = {label: group for label, group in prediction.groupby("label")}
    empty_prediction = prediction.iloc[0:0]
    results = Parallel(n_jobs=jobs, prefer="threads")(
        delayed(average_precision)(
            gt_by_label[label], pred_by_label.get(label, empty_prediction), all_thresholds
        )
        for label in labels
    )
    ap = np.vstack(results)  # (classes, thresholds)
    mean_ap = ap.mean(axis=0)
    by_threshold = dict(zip(all_thresholds, mean_ap))

    report.map_by_threshold = {_threshold_key(t): float(by_threshold[_threshold_key(t)]) for t in thresholds}
    report.average_map = float(np.mean([by_threshold[_threshold_key(t)] for t in AVERAGE_MAP_THRESHOLDS]))
    column = {threshold: index for index, threshold in enumerate(all_thresholds)}
    report.ap_by_class = {
        label: [float(ap[row, column[_threshold_key(t)]]) for t in thresholds]
        for row, label in enumerate(labels)
    }
    logger.info(
        f"Evaluated {report.num_predictions} predictions against {report.num_ground_truth} instances: "
        + ", ".join(f"mAP@{t:.2f}={v:.4f}" for t, v in report.map_by_threshold.items())
        + f", average mAP={report.average_map:.4f}"
    )
    return report
