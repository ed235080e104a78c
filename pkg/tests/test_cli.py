import json

import numpy as np
import pytest

from recoat.cli import main
from recoat.datagen import iter_dataset
from recoat.metrics import read_metrics_csv
from recoat.model import PredictionSet, tiny_config, write_predictions
from recoat.scene import scene_to_target_frame
from recoat.train import TrainConfig, checkpoint_name


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["generate", "--out", str(d), "--count", "64", "--seed", "1"]) == 0
    return d


def test_help_on_every_subcommand(capsys):
    for cmd in ("generate", "rasterize", "train", "predict", "eval"):
        assert main([cmd, "--help"]) == 0
        assert "usage" in capsys.readouterr().out


def test_usage_errors(capsys):
    assert main(["train", "--data", "d", "--run-dir", "r", "--bogus"]) == 1
    assert "unrecognized arguments: --bogus" in capsys.readouterr().err
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    assert main(["generate", "--out", "x", "--count", "0"]) == 1


def test_unknown_flag_message(capsys, dataset):
    assert main(["eval", "--predictions", "p", "--data", str(dataset), "--out", "m", "--what"]) == 1
    assert "--what" in capsys.readouterr().err


def test_runtime_error_exit_code(tmp_path, capsys):
    assert main(["eval", "--predictions", str(tmp_path / "missing.jsonl"), "--data", str(tmp_path),
                 "--out", str(tmp_path / "m.csv")]) == 2
    assert "error" in capsys.readouterr().err


def test_generate_manifest(dataset):
    lines = (dataset / "manifest.csv").read_text().splitlines()
    assert lines[0] == "path,intent,template" and len(lines) == 65


def test_rasterize_twice_identical(tmp_path, dataset):
    scenes = sorted(str(p) for p in dataset.glob("*.json"))[:3]
    assert main(["rasterize", *scenes, "--out", str(tmp_path / "a")]) == 0
    assert main(["rasterize", *scenes, "--out", str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(names) == 3
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_eval_perfect_predictions(tmp_path, dataset):
    preds = []
    for sc in iter_dataset(dataset):
        gt = scene_to_target_frame(sc).target_future
        preds.append((sc.scenario_id, PredictionSet(np.repeat(gt[None], 6, axis=0), np.arange(6, 0, -1) / 21)))
    write_predictions(tmp_path / "p.jsonl", preds)
    assert main(["eval", "--predictions", str(tmp_path / "p.jsonl"), "--data", str(dataset),
                 "--out", str(tmp_path / "m.csv"), "--horizons"]) == 0
    m = read_metrics_csv(tmp_path / "m.csv")
    assert m["minADE"] == 0.0 and m["minFDE"] == 0.0 and m["miss_rate"] == 0.0 and m["mAP"] == 1.0
    assert m["minADE@3s"] == 0.0


def test_eval_missing_prediction(tmp_path, dataset):
    write_predictions(tmp_path / "p.jsonl", [])
    assert main(["eval", "--predictions", str(tmp_path / "p.jsonl"), "--data", str(dataset),
                 "--out", str(tmp_path / "m.csv")]) == 2


def test_train_one_epoch_then_predict(tmp_path, dataset):
    cfg_path = tmp_path / "cfg.json"
    TrainConfig(model=tiny_config(), batch_size=16).save(cfg_path)
    run = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--run-dir", str(run), "--config", str(cfg_path),
                 "--epochs", "1", "--quiet"]) == 0
    assert [p.name for p in run.glob("*.rcat")] == [checkpoint_name(1)]
    assert json.loads((run / "config.json").read_text())["epochs"] == 1
    out = tmp_path / "p.jsonl"
    assert main(["predict", "--checkpoint", str(run), "--data", str(dataset), "--out", str(out)]) == 0
    recs = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(recs) == 64 and recs[0]["version"] == "recoat-pred/1"
    assert np.array(recs[0]["trajectories"]).shape == (6, 16, 2)
    assert abs(sum(recs[0]["probs"]) - 1) < 1e-6
    assert main(["eval", "--predictions", str(out), "--data", str(dataset), "--out", str(tmp_path / "m.csv")]) == 0


def test_train_bad_config_is_usage_error(tmp_path, dataset):
    assert main(["train", "--data", str(dataset), "--run-dir", str(tmp_path), "--lr", "-1"]) == 1


def test_predict_missing_checkpoint(tmp_path, dataset):
    assert main(["predict", "--checkpoint", str(tmp_path), "--data", str(dataset),
                 "--out", str(tmp_path / "p.jsonl")]) == 2
