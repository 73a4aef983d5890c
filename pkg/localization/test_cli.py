"""
Tests for the command line application
"""

import sys
import os

# Make the tvnet package importable when run from anywhere
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import json

import pandas as pd
import pytest
from typer.testing import CliRunner

from tvnet.cli.app import app
from tvnet.models.annotations import PredictionSet, Proposal, load_annotations, save_predictions
from tvnet.services.manifest import read_manifest

from test_pipeline import TINY

runner = CliRunner()


def invoke(*args):
    return runner.invoke(app, [str(arg) for arg in args])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config_path = root / "tiny.json"
    config_path.write_text(json.dumps({**TINY, "data_dir": str(root / "data")}))
    return root, config_path


@pytest.fixture(scope="module")
def trained_workspace(workspace):
    root, config_path = workspace
    result = invoke("gen-data", "--config", config_path, "--out-dir", root / "data")
    assert result.exit_code == 0, result.output
    result = invoke("train", "--config", config_path, "--out-dir", root / "work")
    assert result.exit_code == 0, result.output
    return root, config_path


def test_gen_data_writes_dataset_and_manifest(trained_workspace):
    root, _ = trained_workspace
    annotations = load_annotations(root / "data" / "annotations.json")
    assert len(annotations) == 9
    assert len(list((root / "data" / "features").glob("*.tvnf"))) == 9
    manifest = read_manifest(root / "data")
    assert manifest["command"] == "gen-data"
    assert manifest["videos"] == 9


def test_train_saves_config_and_checkpoints(trained_workspace):
    root, _ = trained_workspace
    work = root / "work"
    assert (work / "config.json").exists()
    assert (work / "checkpoints" / "vem_J3.tvnc").exists()
    assert read_manifest(work)["stage"] == "all"


def test_infer_then_eval(trained_workspace):
    root, config_path = trained_workspace
    work = root / "work"
    result = invoke("infer", "--config", config_path, "--out-dir", work, "--curves", "--candidates", "--jobs", 2)
    assert result.exit_code == 0, result.output
    assert (work / "predictions.json").exists()
    assert len(list((work / "curves").glob("*.csv"))) == 3

    result = invoke("eval", "--predictions", work / "predictions.json",
                    "--annotations", root / "data" / "annotations.json", "--split", "test",
                    "--thresholds", "0.3,0.5")
    assert result.exit_code == 0, result.output
    report = json.loads((work / "eval.json").read_text())
    assert set(report["map"]) == {"0.30", "0.50"}
    assert list(pd.read_csv(work / "eval.csv").columns) == ["setting", "0.30", "0.50", "Avg"]


def test_eval_of_ground_truth_is_perfect(trained_workspace, tmp_path):
    root, _ = trained_workspace
    annotations = load_annotations(root / "data" / "annotations.json", "testing")
    perfect = {
        video_id: PredictionSet(video_id, [Proposal(i.start, i.end, 1.0, i.label) for i in annotation.instances])
        for video_id, annotation in annotations.items()
    }
    predictions_path = save_predictions(tmp_path / "predictions.json", perfect)
    result = invoke("eval", "--predictions", predictions_path, "--annotations", root / "data" / "annotations.json",
                    "--split", "test", "--name", "perfect")
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "perfect.json").read_text())
    assert report["average_map"] == pytest.approx(1.0)


@pytest.mark.parametrize("args", [
    ["train", "--stage", "bogus"],
    ["infer"],
    ["ablate", "--sweep", "depth"],
])
def test_command_errors_exit_with_status_one(workspace, tmp_path, args):
    _, config_path = workspace
    result = invoke(*args, "--config", config_path, "--out-dir", tmp_path / "empty")
    assert result.exit_code == 1


def test_eval_of_missing_file_fails(tmp_path):
    result = invoke("eval", "--predictions", tmp_path / "none.json", "--annotations", tmp_path / "none.json")
    assert result.exit_code == 1


def test_invalid_config_fails(tmp_path):
    config_path = tmp_path / "bad.json"
    config_path.write_text(json.dumps({"proposals": {"xi": 2.0}}))
    result = invoke("gen-data", "--config", config_path, "--out-dir", tmp_path / "data")
    assert result.exit_code == 1
