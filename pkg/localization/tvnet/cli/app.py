"""
TVNet - Command Line Application
"""

import logging
from pathlib import Path
from typing import Optional

import typer
from rich.console import Console
from rich.table import Table

from tvnet.config.settings import (
    ABLATION_SWEEPS,
    DATA_SPLITS,
    DATASET_PRESETS,
    IOU_THRESHOLD_PRESETS,
    TRAINING_STAGES,
    PipelineConfig,
    TvnetEnvSettings,
    configure_logging,
    resolve_thresholds,
)
from tvnet.core.errors import TVNetError
from tvnet.models.annotations import load_annotations, load_predictions
from tvnet.models.dataset import save_dataset
from tvnet.services.ablation import run_sweep
from tvnet.services.evaluation import EvalReport, compute_map
from tvnet.services.manifest import write_manifest
from tvnet.services.pipeline import TVNetPipeline
from tvnet.services.synth import generate_synthetic

logger = logging.getLogger(__name__)

app = typer.Typer(
    name="tvnet",
    help="Temporal action localization with voting evidence: data, training, inference, evaluation, ablations.",
    no_args_is_help=True,
    add_completion=False,
)
console = Console()
err_console = Console(stderr=True)

ConfigOption = typer.Option(None, "--config", "-c", help="JSON config file (fields override the preset)")
PresetOption = typer.Option("synthetic", "--preset", help=f"Base preset: {', '.join(DATASET_PRESETS)}")
SeedOption = typer.Option(None, "--seed", help="Override the config seed")
JobsOption = typer.Option(None, "--jobs", "-j", min=1, help="Per-video workers (default TVNET_JOBS or 1)")


def _env() -> TvnetEnvSettings:
    return TvnetEnvSettings()


def _load_config(config_path: Optional[Path], preset: str, seed: Optional[int],
                 data_dir: Optional[Path] = None) -> PipelineConfig:
    config = PipelineConfig.load(config_path, preset)
    if seed is not None:
        config = config.with_value("seed", seed).with_value("synth.seed", seed)
    if data_dir is not None:
        config = config.with_value("data_dir", str(data_dir))
    return config


def _jobs(jobs: Optional[int]) -> int:
    return jobs if jobs is not None else _env().jobs


def _work_dir(out_dir: Optional[Path], config: PipelineConfig) -> Path:
    return out_dir if out_dir is not None else Path("runs") / config.name


def _fail(e: Exception) -> None:
    err_console.print(f"[bold red]Error:[/bold red] {e}")
    logger.debug("Command failed", exc_info=True)
    raise typer.Exit(code=1)


def _print_report(report: EvalReport, title: str) -> None:
    if report.empty:
        console.print(f"[yellow]{title}: no ground-truth instances, mAP undefined[/yellow]")
        return
    table = Table(title=title)
    row = report.table_row(title)
    for column in row:
        table.add_column(column, justify="right" if column != "setting" else "left")
    table.add_row(*[value if isinstance(value, str) else f"{value:.4f}" for value in row.values()])
    console.print(table)


@app.callback()
def main(log_level: Optional[str] = typer.Option(None, "--log-level", help="Overrides TVNET_LOG")):
    """Configure logging before any command runs"""
    configure_logging(log_level or _env().log)


@app.command("gen-data")
def gen_data(
    config_path: Optional[Path] = ConfigOption,
    preset: str = PresetOption,
    seed: Optional[int] = SeedOption,
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", "-o", help="Dataset directory (default: config data_dir)"),
):
    """Generate the synthetic train/test dataset"""
    try:
        config = _load_config(config_path, preset, seed)
        config.check_synthetic_durations()
        target = out_dir if out_dir is not None else Path(config.data_dir)
        annotations, features = generate_synthetic(config.synth)
        save_dataset(target, annotations, features)
        write_manifest(target, "gen-data", config, config.synth.seed, 1, {"videos": len(annotations)})
        console.print(f"Wrote {len(annotations)} videos to [bold]{target}[/bold]")
    except (TVNetError, ValueError) as e:
        _fail(e)


@app.command()
def train(
    config_path: Optional[Path] = ConfigOption,
    preset: str = PresetOption,
    stage: str = typer.Option("all", "--stage", "-s", help=f"One of {', '.join(TRAINING_STAGES)} or all"),
    seed: Optional[int] = SeedOption,
    jobs: Optional[int] = JobsOption,
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", "-o", help="Work directory (default runs/<name>)"),
    data_dir: Optional[Path] = typer.Option(None, "--data-dir", "-d", help="Dataset directory"),
    resume: bool = typer.Option(False, "--resume", help="Continue interrupted stages from their state files"),
    max_epochs: Optional[int] = typer.Option(None, "--max-epochs", min=0, help="Cap on epochs per stage"),
):
    """Train the networks in order: tem, pem, vem"""
    try:
        config = _load_config(config_path, preset, seed, data_dir)
        work_dir = _work_dir(out_dir, config)
        pipeline = TVNetPipeline(config, work_dir, _jobs(jobs))
        results = pipeline.train(stage, resume=resume, max_epochs=max_epochs)
        config.save(work_dir / "config.json")
        write_manifest(work_dir, "train", config, config.seed, pipeline.jobs, {"stage": stage})
        for name, result in results.items():
            final = f"{result.losses[-1]:.6f}" if result.losses else "n/a"
            console.print(f"{name}: {result.epochs_completed} epochs, final loss {final}")
    except (TVNetError, ValueError) as e:
        _fail(e)


@app.command()
def infer(
    config_path: Optional[Path] = ConfigOption,
    preset: str = PresetOption,
    split: str = typer.Option("test", "--split", help="Split to predict"),
    seed: Optional[int] = SeedOption,
    jobs: Optional[int] = JobsOption,
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", "-o", help="Work directory holding the checkpoints"),
    data_dir: Optional[Path] = typer.Option(None, "--data-dir", "-d", help="Dataset directory"),
    curves: bool = typer.Option(False, "--curves", help="Write per-video score-curve CSVs"),
    svg: bool = typer.Option(False, "--svg", help="Write per-video SVG charts"),
    candidates: bool = typer.Option(False, "--candidates", help="Write per-video candidate-boundary CSVs"),
):
    """Predict proposals for one split and write predictions.json"""
    try:
        config = _load_config(config_path, preset, seed, data_dir)
        work_dir = _work_dir(out_dir, config)
        pipeline = TVNetPipeline(config, work_dir, _jobs(jobs))
        predictions = pipeline.infer(split, work_dir, curves=curves, svg=svg, candidates=candidates)
        write_manifest(work_dir, "infer", config, config.seed, pipeline.jobs, {"split": split})
        total = sum(len(prediction) for prediction in predictions.values())
        console.print(f"{total} predictions for {len(predictions)} videos in [bold]{work_dir}[/bold]")
    except (TVNetError, ValueError) as e:
        _fail(e)


@app.command("eval")
def evaluate(
    predictions_path: Path = typer.Option(..., "--predictions", "-p", help="Prediction JSON"),
    annotations_path: Path = typer.Option(..., "--annotations", "-a", help="Annotation JSON"),
    thresholds: Optional[str] = typer.Option(
        None, "--thresholds", "-t", help="Comma list or preset (activitynet, thumos, average)"
    ),
    split: Optional[str] = typer.Option(None, "--split", help="Only annotations of this subset"),
    jobs: Optional[int] = JobsOption,
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", "-o", help="Report directory (default: next to predictions)"),
    name: str = typer.Option("eval", "--name", help="Report file name and table row label"),
):
    """Compute mAP at IoU thresholds and the average mAP over 0.5:0.05:0.95"""
    try:
        subset = DATA_SPLITS.get(split, split) if split else None
        annotations = load_annotations(annotations_path, subset)
        predictions = load_predictions(predictions_path)
        threshold_list = resolve_thresholds(thresholds, IOU_THRESHOLD_PRESETS["activitynet"])
        report = compute_map(predictions, annotations, threshold_list, _jobs(jobs))
        target = out_dir if out_dir is not None else predictions_path.parent
        report.save(target, name)
        write_manifest(target, "eval", None, None, _jobs(jobs), {
            "predictions": str(predictions_path),
            "annotations": str(annotations_path),
            "thresholds": threshold_list,
        })
        _print_report(report, name)
    except (TVNetError, ValueError) as e:
        _fail(e)


@app.command()
def ablate(
    config_path: Optional[Path] = ConfigOption,
    preset: str = PresetOption,
    sweep: str = typer.Option(..., "--sweep", help=f"One of {', '.join(ABLATION_SWEEPS)}"),
    seed: Optional[int] = SeedOption,
    jobs: Optional[int] = JobsOption,
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", "-o", help="Work directory holding the base checkpoints"),
    data_dir: Optional[Path] = typer.Option(None, "--data-dir", "-d", help="Dataset directory"),
    split: str = typer.Option("test", "--split", help="Evaluation split"),
    max_epochs: Optional[int] = typer.Option(None, "--max-epochs", min=0, help="Cap on retraining epochs"),
):
    """Run an ablation sweep and write ablation_<sweep>.csv"""
    try:
        config = _load_config(config_path, preset, seed, data_dir)
        work_dir = _work_dir(out_dir, config)
        table = run_sweep(config, sweep, work_dir, jobs=_jobs(jobs), split=split, max_epochs=max_epochs)
        write_manifest(work_dir / "ablation", "ablate", config, config.seed, _jobs(jobs), {"sweep": sweep})
        rich_table = Table(title=f"ablation: {sweep}")
        for column in table.columns:
            rich_table.add_column(str(column))
        for _, row in table.iterrows():
            rich_table.add_row(*[value if isinstance(value, str) else f"{value:.4f}" for value in row.tolist()])
        console.print(rich_table)
    except (TVNetError, ValueError) as e:
        _fail(e)


if __name__ == "__main__":
    app()
