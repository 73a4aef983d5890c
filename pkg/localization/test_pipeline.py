"""
Tests for staged training, checkpoints, inference outputs, ablations, manifests and plots
"""

import sys
import os

# Make the tvnet package importable when run from anywhere
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import json

import numpy as np
import pandas as pd
import pytest

from tvnet.config.settings import PipelineConfig
from tvnet.core.checkpoint import load_checkpoint
from tvnet.core.errors import CheckpointError, ConfigError
from tvnet.models.dataset import save_dataset
from tvnet.services.ablation import check_trends, run_sweep
from tvnet.services.manifest import MANIFEST_FILE, read_manifest, write_manifest
from tvnet.services.pipeline import PREDICTIONS_FILE, TVNetPipeline
from tvnet.services.plotting import CURVE_COLUMNS, render_svg, save_score_curves, score_curve_frame
from tvnet.services.synth import generate_synthetic

TINY = {
    "name": "tiny",
    "T": 32,
    "C": 4,
    "seed": 3,
    "thresholds": [0.3, 0.5],
    "synth": {
        "num_train": 6, "num_test": 3, "T": 32, "C": 4, "num_classes": 2, "duration_range": [4, 10],
        "actions_per_video": [1, 2], "edge_margin": 2, "min_gap": 2, "seed": 3,
    },
    "tem": {"hidden_channels": 4, "schedule": {"epochs": 2, "batch_size": 4, "boundaries": [], "rates": [1e-2]}},
    "vem": {
        "window_lengths": [5, 3], "conv_channels": 4, "hidden_size": 4,
        "schedule": {"epochs": 1, "batch_size": 64, "boundaries": [], "rates": [1e-2]},
    },
    "pem": {
        "hidden_size": 4, "num_interior": 4, "num_flank": 2, "jitter_copies": 3,
        "schedule": {"epochs": 2, "batch_size": 32, "boundaries": [], "rates": [1e-2]},
    },
    "proposals": {"tau": 32, "top_k": 20},
}


def tiny_config(data_dir):
    return PipelineConfig.model_validate({**TINY, "data_dir": str(data_dir)})


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    config = tiny_config(root / "data")
    annotations, features = generate_synthetic(config.synth)
    save_dataset(root / "data", annotations, features)
    pipeline = TVNetPipeline(config, root / "work")
    results = pipeline.train("all")
    return pipeline, results


def test_stages_must_run_in_order(trained, tmp_path):
    pipeline, _ = trained
    fresh = TVNetPipeline(pipeline.config, tmp_path / "fresh")
    with pytest.raises(ConfigError, match="tem"):
        fresh.train("pem")
    with pytest.raises(ConfigError, match="tem"):
        fresh.train("vem")
    with pytest.raises(ConfigError, match="Unknown stage"):
        fresh.train("bogus")


def test_training_writes_checkpoints_and_loss_curves(trained):
    pipeline, results = trained
    assert set(results) == {"tem", "pem", "vem-start-J5", "vem-end-J5", "vem-start-J3", "vem-end-J3"}
    for name in ("tem.tvnc", "pem.tvnc", "vem_J5.tvnc", "vem_J3.tvnc"):
        path = pipeline.checkpoint_dir / name
        assert path.exists()
        sidecar = json.loads(path.with_suffix(".json").read_text())
        assert sidecar["config_hash"] == pipeline.config.config_hash()
    for stage in results:
        frame = pd.read_csv(pipeline.checkpoint_dir / f"{stage}_loss.csv")
        assert len(frame) == results[stage].epochs_completed
    assert results["tem"].epochs_completed == 2


def test_resumed_stage_matches_uninterrupted_training(trained, tmp_path):
    pipeline, results = trained
    staged = TVNetPipeline(pipeline.config, tmp_path / "staged")
    dataset = pipeline.load_split("train")
    partial = staged.train("tem", dataset, max_epochs=1)
    assert partial["tem"].epochs_completed == 1
    resumed = staged.train("tem", dataset, resume=True)
    np.testing.assert_array_equal(resumed["tem"].losses, results["tem"].losses)
    expected = load_checkpoint(pipeline.checkpoint_path("tem"))
    actual = load_checkpoint(staged.checkpoint_path("tem"))
    for name, value in expected.items():
        np.testing.assert_array_equal(actual[name], value)


def test_inference_is_independent_of_worker_count(trained, tmp_path):
    pipeline, _ = trained
    serial = pipeline.infer("test", tmp_path / "serial")
    parallel = TVNetPipeline(pipeline.config, pipeline.work_dir, jobs=3).infer("test", tmp_path / "parallel")
    assert list(serial) == list(parallel)
    assert (tmp_path / "serial" / PREDICTIONS_FILE).read_text() == (tmp_path / "parallel" / PREDICTIONS_FILE).read_text()


def test_inference_outputs(trained, tmp_path):
    pipeline, _ = trained
    dataset = pipeline.load_split("test")
    predictions = pipeline.infer(out_dir=tmp_path, dataset=dataset, curves=True, svg=True, candidates=True)
    assert set(predictions) == {sample.video_id for sample in dataset}
    for sample in dataset:
        prediction = predictions[sample.video_id]
        assert len(prediction) <= pipeline.config.proposals.top_k * pipeline.config.proposals.top_c
        labels = {video_class.label for video_class in sample.annotation.video_classes}
        for proposal in prediction.proposals:
            assert proposal.score >= 0
            assert 0 <= proposal.start < proposal.end <= sample.annotation.duration
            assert proposal.label in labels
        curves = pd.read_csv(tmp_path / "curves" / f"{sample.video_id}.csv")
        assert list(curves.columns) == CURVE_COLUMNS
        assert len(curves) == sample.T
        assert (tmp_path / "curves" / f"{sample.video_id}.svg").read_text().startswith("<svg")
        assert (tmp_path / "candidates" / f"{sample.video_id}.csv").exists()

    report = pipeline.evaluate(predictions, dataset.annotations)
    assert not report.empty
    assert 0.0 <= report.average_map <= 1.0
    assert all(0.0 <= value <= 1.0 for value in report.map_by_threshold.values())


def test_checkpoint_architecture_mismatch(trained):
    pipeline, _ = trained
    wider = TVNetPipeline(pipeline.config.with_value("vem.hidden_size", 8), pipeline.work_dir)
    with pytest.raises(CheckpointError, match="hidden_size"):
        wider.load_models()
    other_tem = TVNetPipeline(pipeline.config.with_value("tem.hidden_channels", 6), pipeline.work_dir)
    with pytest.raises(CheckpointError):
        other_tem.load_tem()


def test_missing_checkpoint_names_the_stage(tmp_path):
    pipeline = TVNetPipeline(tiny_config(tmp_path / "data"), tmp_path / "empty")
    with pytest.raises(ConfigError, match="train --stage tem"):
        pipeline.load_tem()


def test_alpha_sweep_reuses_checkpoints(trained, tmp_path):
    pipeline, _ = trained
    table = run_sweep(pipeline.config, "alpha", pipeline.work_dir, out_dir=tmp_path)
    assert table["setting"].tolist() == [str(value / 10) for value in range(11)]
    assert list(table.columns)[0] == "setting" and list(table.columns)[-1] == "Avg"
    assert (tmp_path / "ablation_alpha.csv").exists()
    assert (tmp_path / "alpha" / "0.6" / "eval.json").exists()


def test_unknown_sweep(trained):
    pipeline, _ = trained
    with pytest.raises(ConfigError, match="Unknown sweep"):
        run_sweep(pipeline.config, "depth", pipeline.work_dir)


def test_check_trends_reports_inversions():
    table = pd.DataFrame({"setting": ["lstm", "srf", "sll"], "Avg": [0.2, 0.3, 0.1]})
    messages = check_trends("encoder", table)
    assert len(messages) == 1 and "lstm" in messages[0]
    assert check_trends("encoder", table.assign(Avg=[0.3, 0.2, 0.1])) == []
    unstable = pd.DataFrame({"setting": ["0.1", "0.3", "0.5"], "Avg": [0.30, 0.40, 0.31]})
    assert check_trends("xi", unstable)
    assert check_trends("xi", unstable.assign(Avg=[0.30, 0.31, 0.30])) == []


def test_manifest(tmp_path):
    config = tiny_config(tmp_path / "data")
    path = write_manifest(tmp_path, "infer", config, jobs=2, extra={"split": "test"})
    assert path.name == MANIFEST_FILE
    manifest = read_manifest(tmp_path)
    assert manifest["command"] == "infer"
    assert manifest["config_hash"] == config.config_hash()
    assert manifest["seed"] == 3 and manifest["jobs"] == 2
    assert manifest["split"] == "test"
    assert {"tvnet", "python", "numpy", "pandas"} <= set(manifest["versions"])
    assert read_manifest(tmp_path / "nowhere") == {}


def test_score_curve_frame_and_svg(tmp_path):
    curves = {"v_start": np.linspace(0, 1, 5), "b_action": np.full(5, 0.5)}
    frame = score_curve_frame(curves)
    assert frame["t"].tolist() == [0, 1, 2, 3, 4]
    assert save_score_curves(tmp_path / "curve.csv", curves).exists()
    svg = render_svg(curves, boundaries=[(1, 3)], title="a & b")
    assert svg.startswith("<svg") and svg.endswith("</svg>")
    assert "a &amp; b" in svg
    assert svg.count("<polyline") == 2
    with pytest.raises(ValueError):
        score_curve_frame({"v_start": np.zeros(4), "v_end": np.zeros(5)})
