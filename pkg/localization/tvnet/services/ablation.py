"""
TVNet - Ablation Sweeps

Each sweep varies one configuration field over a fixed list of values and
tabulates mAP per IoU threshold, one row per value. Sweeps that change
what the voting encoders see retrain them per row, reusing the trained
boundary and proposal-confidence networks.
"""

import logging
import shutil
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd

from tvnet.config.settings import ABLATION_SWEEPS, PipelineConfig
from tvnet.core.errors import ConfigError
from tvnet.models.dataset import VideoDataset
from tvnet.services.pipeline import PipelineStage, TVNetPipeline

logger = logging.getLogger(__name__)

# Rows expected to rank higher come first
EXPECTED_ORDER = {
    "encoder": ["lstm", "srf"],
    "fusion": ["B+G+V", "G+V", "B"],
}

XI_STABILITY_VALUES = ["0.1", "0.3", "0.5"]
XI_STABILITY_TOLERANCE = 0.03


def setting_name(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return "+".join(str(item) for item in value)
    return str(value)


def _copy_checkpoints(source: TVNetPipeline, target: TVNetPipeline, stages: List[str]) -> None:
    target.checkpoint_dir.mkdir(parents=True, exist_ok=True)
    for stage in stages:
        path = source.checkpoint_path(stage)
        for file in (path, path.with_suffix(".json")):
            if file.exists():
                shutil.copy2(file, target.checkpoint_dir / file.name)


def check_trends(sweep: str, table: pd.DataFrame) -> List[str]:
    """
    Compare the sweep's average mAPs with the expected ordering

    Returns:
        List[str]: One message per inversion or instability (also logged as warnings)
    """
    messages = []
    average = dict(zip(table["setting"], table["Avg"]))
    order = [name for name in EXPECTED_ORDER.get(sweep, []) if average.get(name) is not None]
    for better, worse in zip(order, order[1:]):
        if average[better] < average[worse]:
            messages.append(f"{sweep}: {better} ({average[better]:.4f}) ranks below {worse} ({average[worse]:.4f})")
        elif average[better] == average[worse]:
            logger.warning(f"{sweep}: {better} and {worse} tie at {average[better]:.4f}")
    if sweep == "xi":
        values = [average[name] for name in XI_STABILITY_VALUES if average.get(name) is not None]
        if values and max(values) - min(values) > XI_STABILITY_TOLERANCE:
            messages.append(f"xi: average mAP varies by {max(values) - min(values):.4f} over xi in 0.1-0.5")
    for message in messages:
        logger.warning(message)
    return messages


def run_sweep(config: PipelineConfig, sweep: str, work_dir: Union[str, Path],
              out_dir: Optional[Union[str, Path]] = None, jobs: int = 1, split: str = "test",
              train_dataset: Optional[VideoDataset] = None, eval_dataset: Optional[VideoDataset] = None,
              max_epochs: Optional[int] = None) -> pd.DataFrame:
    """
    Run one ablation sweep

    Args:
        config: Base configuration
        sweep: Name in ABLATION_SWEEPS
        work_dir: Work directory holding the base checkpoints
        out_dir: Where the CSV and per-row outputs go (defaults to work_dir/ablation)
        jobs: Per-video workers
        split: Evaluation split
        train_dataset: Videos for retraining rows (defaults to the train split)
        eval_dataset: Videos to evaluate on (defaults to split)
        max_epochs: Cap on retraining epochs

    Returns:
        pd.DataFrame: One row per setting: setting, one column per threshold, Avg

    Raises:
        ConfigError: For an unknown sweep or missing base checkpoints
    """
    if sweep not in ABLATION_SWEEPS:
        raise ConfigError(f"Unknown sweep '{sweep}'. Options: {', '.join(ABLATION_SWEEPS)}")
    definition = ABLATION_SWEEPS[sweep]
    work_dir = Path(work_dir)
    out_dir = Path(out_dir) if out_dir else work_dir / "ablation"
    base = TVNetPipeline(config, work_dir, jobs)
    for stage in (PipelineStage.TEM.value, PipelineStage.PEM.value):
        if not base.has_checkpoint(stage):
            raise ConfigError(f"Sweep '{sweep}' needs a trained {stage} checkpoint in {base.checkpoint_dir}")
    eval_dataset = eval_dataset if eval_dataset is not None else base.load_split(split)
    retrain = PipelineStage.VEM.value in definition["retrain"]
    if retrain and train_dataset is None:
        train_dataset = base.load_split("train")

    rows: List[Dict[str, Any]] = []
    for value in definition["values"]:
        name = setting_name(value)
        row_config = config.with_value(definition["field"], value)
        row_dir = out_dir / sweep / name
        if retrain and row_config.config_hash() != config.config_hash():
            pipeline = TVNetPipeline(row_config, row_dir, jobs)
            _copy_checkpoints(base, pipeline, [PipelineStage.TEM.value, PipelineStage.PEM.value])
            pipeline.train(PipelineStage.VEM.value, train_dataset, max_epochs=max_epochs)
        else:
            pipeline = TVNetPipeline(row_config, work_dir, jobs)
        predictions = pipeline.infer(out_dir=row_dir, dataset=eval_dataset)
        report = pipeline.evaluate(predictions, eval_dataset.annotations)
        report.save(row_dir, "eval")
        rows.append(report.table_row(name))
        logger.info(f"[{sweep}] {definition['field']}={name}: average mAP {report.average_map}")

    table = pd.DataFrame(rows)
    csv_path = out_dir / f"ablation_{sweep}.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(csv_path, index=False, float_format="%.4f")
    logger.info(f"Wrote {csv_path}")
    check_trends(sweep, table)
    return table
