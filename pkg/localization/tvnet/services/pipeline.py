"""
TVNet - Pipeline

Staged training (TEM, then PEM, then VEM), checkpoint management and
per-video inference from features to classified proposals.
"""

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from tvnet.config.settings import FUSION_MODES, TRAINING_STAGES, PipelineConfig
from tvnet.core.checkpoint import load_checkpoint, save_checkpoint
from tvnet.core.errors import CheckpointError, ConfigError
from tvnet.core.layers import Module
from tvnet.models.annotations import AnnotationSet, PredictionSet, save_predictions
from tvnet.models.dataset import VideoDataset, VideoSample
from tvnet.models.features import FeatureSequence
from tvnet.services.evaluation import EvalReport, compute_map
from tvnet.services.pem import PemModel, build_pem_training_set, input_size, pem_score_batch, pem_train
from tvnet.services.plotting import save_score_curves, save_svg
from tvnet.services.proposals import (
    CandidateBoundary,
    ScoredProposal,
    assign_classes,
    deduplicate,
    extract_candidates,
    fuse_confidence,
    pair_proposals,
    save_candidates,
    soft_nms,
    to_prediction_set,
)
from tvnet.services.tem import BoundaryScores, TemModel, suppress_background, tem_forward, tem_train
from tvnet.services.trainer import TrainResult, stage_rng
from tvnet.services.vem import (
    VemPair,
    VotingScores,
    accumulate_votes,
    build_window_training_set,
    create_vem,
    fuse_all_scales,
    minmax_normalize,
    vem_forward,
    vem_train,
)

logger = logging.getLogger(__name__)

CHECKPOINT_DIR = "checkpoints"
PREDICTIONS_FILE = "predictions.json"


class PipelineStage(Enum):
    """Training stages, in the order they must run"""
    TEM = "tem"
    PEM = "pem"
    VEM = "vem"


@dataclass
class VideoInference:
    """Everything inference computed for one video"""

    sample: VideoSample
    boundary: BoundaryScores
    voting: VotingScores
    starts: List[CandidateBoundary]
    ends: List[CandidateBoundary]
    proposals: List[ScoredProposal]
    predictions: PredictionSet

    @property
    def video_id(self) -> str:
        return self.sample.video_id

    def curves(self) -> Dict[str, np.ndarray]:
        return {
            "v_start": self.voting.v_start,
            "v_end": self.voting.v_end,
            "b_start": self.boundary.b_start,
            "b_end": self.boundary.b_end,
            "b_action": self.boundary.b_action,
        }


@dataclass
class TrainedModels:
    tem: TemModel
    pem: PemModel
    vem: Dict[int, VemPair]


class TVNetPipeline:
    """
    Trains and runs the three networks of one configuration

    Checkpoints live in <work_dir>/checkpoints as tem.tvnc, pem.tvnc and
    vem_J<J>.tvnc, each with a JSON sidecar describing the architecture it
    was trained with.
    """

    def __init__(self, config: PipelineConfig, work_dir: Union[str, Path], jobs: int = 1):
        self.config = config
        self.work_dir = Path(work_dir)
        self.checkpoint_dir = self.work_dir / CHECKPOINT_DIR
        self.jobs = jobs
        self.dtype = np.dtype(config.dtype)
        logger.info(f"Pipeline '{config.name}' in {self.work_dir} (jobs={jobs}, config {config.config_hash()[:12]})")

    # -- data -----------------------------------------------------------------
    def load_split(self, split: Optional[str], data_dir: Optional[Union[str, Path]] = None) -> VideoDataset:
        return VideoDataset.load(
            data_dir or self.config.data_dir, split, T=self.config.T, C=self.config.C,
            rescale=self.config.rescale, dtype=self.config.dtype,
        )

    # -- checkpoints ----------------------------------------------------------
    def checkpoint_path(self, stage: str, window_length: Optional[int] = None) -> Path:
        if stage == PipelineStage.VEM.value:
            return self.checkpoint_dir / f"vem_J{window_length}.tvnc"
        return self.checkpoint_dir / f"{stage}.tvnc"

    def architecture(self, stage: str, window_length: Optional[int] = None) -> Dict[str, Any]:
        """Settings a checkpoint of this stage must agree with"""
        config = self.config
        if stage == PipelineStage.TEM.value:
            return {
                "in_channels": config.C,
                "hidden_channels": config.tem.hidden_channels,
                "kernel_size": config.tem.kernel_size,
            }
        if stage == PipelineStage.PEM.value:
            return {
                "in_features": input_size(config.pem, config.C),
                "hidden_size": config.pem.hidden_size,
                "num_interior": config.pem.num_interior,
                "num_flank": config.pem.num_flank,
                "input_source": config.pem.input_source,
            }
        return {
            "in_channels": config.C,
            "window_length": window_length,
            "encoder": config.vem.encoder,
            "conv_channels": config.vem.conv_channels,
            "kernel_size": config.vem.kernel_size,
            "hidden_size": config.vem.hidden_size,
        }

    def save_model(self, stage: str, model: Module, window_length: Optional[int] = None) -> Path:
        path = self.checkpoint_path(stage, window_length)
        save_checkpoint(path, model.state_dict())
        metadata = {
            "stage": stage,
            "architecture": self.architecture(stage, window_length),
            "T": self.config.T,
            "dtype": self.config.dtype,
            "seed": self.config.seed,
            "config_hash": self.config.config_hash(),
            "num_parameters": model.num_parameters(),
        }
        path.with_suffix(".json").write_text(json.dumps(metadata, indent=2))
        logger.info(f"Saved {stage} checkpoint {path}")
        return path

    def has_checkpoint(self, stage: str) -> bool:
        if stage == PipelineStage.VEM.value:
            return all(self.checkpoint_path(stage, J).exists() for J in self.config.vem.window_lengths)
        return self.checkpoint_path(stage).exists()

    def _load_into(self, model: Module, stage: str, window_length: Optional[int] = None) -> Module:
        path = self.checkpoint_path(stage, window_length)
        if not path.exists():
            raise ConfigError(f"Missing {stage} checkpoint {path}; run `train --stage {stage}` first")
        sidecar = path.with_suffix(".json")
        if sidecar.exists():
            trained = json.loads(sidecar.read_text()).get("architecture", {})
            expected = self.architecture(stage, window_length)
            mismatched = [key for key, value in expected.items() if key in trained and trained[key] != value]
            if mismatched:
                details = ", ".join(f"{key}: checkpoint {trained[key]!r} vs config {expected[key]!r}" for key in mismatched)
                raise CheckpointError(f"{path} does not match the configuration ({details})")
        else:
            logger.warning(f"No metadata next to {path}; only parameter shapes are checked")
        model.load_state_dict(load_checkpoint(path))
        return model

    def create_tem(self) -> TemModel:
        return TemModel(self.config.C, self.config.tem, stage_rng(self.config.seed, "tem-init"), self.dtype)

    def create_pem(self) -> PemModel:
        return PemModel(input_size(self.config.pem, self.config.C), self.config.pem,
                        stage_rng(self.config.seed, "pem-init"), self.dtype)

    def load_tem(self) -> TemModel:
        return self._load_into(self.create_tem(), PipelineStage.TEM.value)

    def load_pem(self) -> PemModel:
        return self._load_into(self.create_pem(), PipelineStage.PEM.value)

    def load_vem(self, window_length: int) -> VemPair:
        model = create_vem(window_length, self.config.C, self.config.vem, self.config.seed, self.dtype)
        return self._load_into(model, PipelineStage.VEM.value, window_length)

    def load_models(self) -> TrainedModels:
        return TrainedModels(
            self.load_tem(),
            self.load_pem(),
            {J: self.load_vem(J) for J in self.config.vem.window_lengths},
        )

    # -- training -------------------------------------------------------------
    def _require(self, stage: str, *prerequisites: str) -> None:
        for prerequisite in prerequisites:
            if not self.has_checkpoint(prerequisite):
                raise ConfigError(
                    f"Cannot train {stage}: the {prerequisite} checkpoint is missing from {self.checkpoint_dir}. "
                    f"Run `train --stage {prerequisite}` first"
                )

    def _save_losses(self, result: TrainResult) -> None:
        result.save_csv(self.checkpoint_dir / f"{result.stage}_loss.csv")

    def train(self, stage: str = "all", dataset: Optional[VideoDataset] = None, resume: bool = False,
              max_epochs: Optional[int] = None) -> Dict[str, TrainResult]:
        """
        Train one stage or all of them in order

        Args:
            stage: "tem", "pem", "vem" or "all"
            dataset: Training videos (defaults to the train split of data_dir)
            resume: Continue interrupted stages from their state files
            max_epochs: Cap on the total epochs of every stage

        Returns:
            Dict[str, TrainResult]: Loss curves keyed by stage name

        Raises:
            ConfigError: For an unknown stage or a missing prerequisite checkpoint
        """
        stages = TRAINING_STAGES if stage == "all" else [stage]
        if any(name not in TRAINING_STAGES for name in stages):
            raise ConfigError(f"Unknown stage '{stage}'. Options: {', '.join(TRAINING_STAGES + ['all'])}")
        if dataset is None:
            dataset = self.load_split("train")
        if len(dataset) == 0:
            raise ConfigError("No training videos found")
        results: Dict[str, TrainResult] = {}
        for name in stages:
            if name == PipelineStage.TEM.value:
                results[name] = self.train_tem(dataset, resume, max_epochs)
            elif name == PipelineStage.PEM.value:
                results[name] = self.train_pem(dataset, resume, max_epochs)
            else:
                results.update(self.train_vem(dataset, resume, max_epochs))
        return results

    def train_tem(self, dataset: VideoDataset, resume: bool = False,
                  max_epochs: Optional[int] = None) -> TrainResult:
        model = self.create_tem()
        state_path = self.checkpoint_dir / "tem.state.tvnc"
        result = tem_train(model, list(dataset), self.config.tem, self.config.seed, state_path, resume, max_epochs)
        self.save_model(PipelineStage.TEM.value, model)
        self._save_losses(result)
        return result

    def boundary_candidates(self, scores: BoundaryScores) -> np.ndarray:
        """(P, 2) start/end pairs from the naive boundary scores"""
        starts, ends = extract_candidates(
            minmax_normalize(scores.b_start, "start scores"),
            minmax_normalize(scores.b_end, "end scores"),
            self.config.proposals.xi,
        )
        pairs = pair_proposals(starts, ends, self.config.proposals.tau)
        return np.asarray(pairs, dtype=np.float64).reshape(-1, 2)

    def _pem_signal(self, features: FeatureSequence, b_action: np.ndarray) -> np.ndarray:
        if self.config.pem.input_source == "actionness":
            return b_action
        return suppress_background(features, b_action).data

    def train_pem(self, dataset: VideoDataset, resume: bool = False,
                  max_epochs: Optional[int] = None) -> TrainResult:
        self._require(PipelineStage.PEM.value, PipelineStage.TEM.value)
        tem = self.load_tem()
        candidates, signals = [], []
        for sample in dataset:
            scores = tem_forward(tem, sample.features)
            candidates.append(self.boundary_candidates(scores))
            signals.append(self._pem_signal(sample.features, scores.b_action))
        features, targets = build_pem_training_set(list(dataset), candidates, signals, self.config.pem, self.config.seed)
        model = self.create_pem()
        state_path = self.checkpoint_dir / "pem.state.tvnc"
        result = pem_train(model, features, targets, self.config.pem, self.config.seed, state_path, resume, max_epochs)
        self.save_model(PipelineStage.PEM.value, model)
        self._save_losses(result)
        return result

    def actionness(self, tem: TemModel, features: FeatureSequence) -> BoundaryScores:
        """TEM scores with the disabled parts replaced by constants"""
        scores = tem_forward(tem, features)
        if not self.config.tem.use_actionness:
            scores = BoundaryScores(scores.b_start, scores.b_end, np.ones(features.T))
        return scores

    def train_vem(self, dataset: VideoDataset, resume: bool = False,
                  max_epochs: Optional[int] = None) -> Dict[str, TrainResult]:
        self._require(PipelineStage.VEM.value, PipelineStage.TEM.value, PipelineStage.PEM.value)
        tem = self.load_tem()
        suppressed = [
            suppress_background(sample.features, self.actionness(tem, sample.features).b_action)
            for sample in dataset
        ]
        annotations = [sample.annotation for sample in dataset]
        results: Dict[str, TrainResult] = {}
        for J in self.config.vem.window_lengths:
            training_set = build_window_training_set(
                suppressed, annotations, J, self.config.vem.stride, self.config.vem.empty_video_weight
            )
            logger.info(f"Training voting encoders J={J} on {len(training_set)} windows")
            model = create_vem(J, self.config.C, self.config.vem, self.config.seed, self.dtype)
            stage_results = vem_train(model, training_set, self.config.vem, self.config.seed,
                                      self.checkpoint_dir, resume, max_epochs)
            self.save_model(PipelineStage.VEM.value, model, J)
            for result in stage_results.values():
                self._save_losses(result)
                results[result.stage] = result
        return results

    # -- inference ------------------------------------------------------------
    def voting_scores(self, models: TrainedModels, suppressed: FeatureSequence) -> VotingScores:
        """Normalized start/end votes fused over every window length"""
        vem_config = self.config.vem
        per_scale = [
            accumulate_votes(
                vem_forward(models.vem[J], suppressed, vem_config.stride, vem_config.inference_batch),
                suppressed.T, J, vem_config.self_vote,
            )
            for J in vem_config.window_lengths
        ]
        return fuse_all_scales(per_scale, vem_config.scale_fusion).normalize()

    def infer_video(self, sample: VideoSample, models: TrainedModels) -> VideoInference:
        """
        Localize the actions of one video

        Raises:
            ShapeError: If the features do not fit the models
        """
        proposal_config = self.config.proposals
        mode = FUSION_MODES[proposal_config.fusion]
        use_boundary = mode["use_boundary"] and self.config.tem.use_boundary

        scores = self.actionness(models.tem, sample.features)
        suppressed = suppress_background(sample.features, scores.b_action)
        voting = self.voting_scores(models, suppressed)

        if mode["candidates"] == "boundary":
            starts, ends = extract_candidates(
                minmax_normalize(scores.b_start, "start scores"), minmax_normalize(scores.b_end, "end scores"),
                proposal_config.xi, scores.b_start, scores.b_end,
            )
        else:
            starts, ends = extract_candidates(voting.v_start, voting.v_end, proposal_config.xi,
                                              scores.b_start, scores.b_end)
        pairs = pair_proposals(starts, ends, proposal_config.tau)
        confidence = pem_score_batch(
            models.pem, np.asarray(pairs, dtype=np.float64).reshape(-1, 2),
            self._pem_signal(sample.features, scores.b_action), self.config.pem,
        )
        scored = deduplicate([
            fuse_confidence(pair, voting.v_start, voting.v_end, scores.b_start, scores.b_end, p,
                            proposal_config.alpha, mode["use_voting"], use_boundary)
            for pair, p in zip(pairs, confidence)
        ])
        selected = soft_nms(scored, proposal_config.sigma, proposal_config.top_k)
        ratio = sample.annotation.frame_rate_ratio(sample.T)
        predictions = assign_classes(to_prediction_set(sample.video_id, selected, ratio),
                                     sample.annotation, proposal_config.top_c)
        logger.debug(
            f"{sample.video_id}: {len(starts)} starts, {len(ends)} ends, {len(pairs)} pairs, "
            f"{len(predictions)} predictions"
        )
        return VideoInference(sample, scores, voting, starts, ends, selected, predictions)

    def run_inference(self, dataset: VideoDataset, models: Optional[TrainedModels] = None) -> List[VideoInference]:
        """Infer every video; results keep the dataset order for any number of jobs"""
        models = models or self.load_models()
        return Parallel(n_jobs=self.jobs, prefer="threads")(
            delayed(self.infer_video)(sample, models) for sample in dataset
        )

    def infer(self, split: Optional[str] = "test", out_dir: Optional[Union[str, Path]] = None,
              dataset: Optional[VideoDataset] = None, curves: bool = False, svg: bool = False,
              candidates: bool = False) -> Dict[str, PredictionSet]:
        """
        Predict one split and write predictions.json

        Args:
            split: Split to predict when no dataset is given
            out_dir: Output directory (defaults to the work directory)
            dataset: Videos to predict
            curves: Also write per-video score-curve CSVs
            svg: Also write per-video SVG charts of the curves
            candidates: Also write per-video candidate-boundary CSVs

        Returns:
            Dict[str, PredictionSet]: Predictions keyed by video id
        """
        out_dir = Path(out_dir) if out_dir else self.work_dir
        if dataset is None:
            dataset = self.load_split(split)
        results = self.run_inference(dataset)
        predictions = {result.video_id: result.predictions for result in results}
        save_predictions(out_dir / PREDICTIONS_FILE, predictions)
        for result in results:
            if curves:
                save_score_curves(out_dir / "curves" / f"{result.video_id}.csv", result.curves())
            if svg:
                save_svg(out_dir / "curves" / f"{result.video_id}.svg", result.curves(),
                         result.sample.annotation.frame_intervals(result.sample.T), result.video_id)
            if candidates:
                save_candidates(out_dir / "candidates" / f"{result.video_id}.csv", result.starts, result.ends)
        total = sum(len(prediction) for prediction in predictions.values())
        logger.info(f"Wrote {total} predictions for {len(predictions)} videos to {out_dir / PREDICTIONS_FILE}")
        return predictions

    def evaluate(self, predictions: Dict[str, PredictionSet], annotations: Dict[str, AnnotationSet],
                 thresholds: Optional[Sequence[float]] = None) -> EvalReport:
        return compute_map(predictions, annotations, thresholds or self.config.thresholds, self.jobs)
