import json

import pytest

from tadquery.cli import main
from tadquery.evaluation import GroundTruthRecord, evaluate_map, save_report
from tadquery.inference import DetectionRecord


def write_config(path, **blocks):
    data = {
        "model": {"num_queries": 5, "enc_layers": 1, "dec_layers": 2, "hidden_dim": 16, "ffn_dim": 16,
                  "points": 2, "heads": 2, "input_dim": 8, "num_classes": 2},
        "data": {"num_videos": 4, "snippets_per_video": 40, "feature_dim": 8, "num_classes": 2,
                 "window": 32, "overlap": 24, "max_actions": 2, "min_duration": 0.15},
        "train": {"batch_size": 2, "epochs": 2, "lr": 1e-3},
        "loss": {"negatives": 4},
    }
    for k, v in blocks.items():
        data[k].update(v)
    path.write_text(json.dumps(data))
    return path


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err


def test_invalid_config_exits_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"heads": 0}}))
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_unknown_subcommand_and_flag_exit_2(capsys):
    assert main(["fly"]) == 2
    assert main(["report", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err


def test_report_shows_hand_fixture(tmp_path, capsys):
    gts = [GroundTruthRecord("v", 0.0, 1.0, 0), GroundTruthRecord("v", 2.0, 3.0, 0)]
    dets = [DetectionRecord("v", 0.0, 1.0, 0, 0.9), DetectionRecord("v", 5.0, 6.0, 0, 0.8),
            DetectionRecord("v", 2.0, 3.0, 0, 0.7)]
    save_report(tmp_path / "report.json", evaluate_map(dets, gts))
    assert main(["report", "--out", str(tmp_path)]) == 0
    header, row = capsys.readouterr().out.strip().splitlines()
    assert header.split()[3] == "0.5" and row.split()[3] == "0.8333"
    assert header.split()[-1] == "Avg."


def test_gradcheck_primitives_exit_0(capsys):
    assert main(["gradcheck", "--primitives-only"]) == 0
    out = capsys.readouterr().out
    assert "max_rel_error=" in out and "passed=True" in out


def test_numeric_failure_exits_3(tmp_path, monkeypatch):
    from tadquery import losses

    real = losses.focal_loss
    monkeypatch.setattr(losses, "focal_loss", lambda *a, **k: real(*a, **k) * float("inf"))
    cfg = write_config(tmp_path / "c.json")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 3


def test_full_pipeline(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "run"
    assert main(["gen-data", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "data" / "manifest.json").is_file()
    assert main(["train", "--config", str(cfg), "--data", str(out / "data"), "--out", str(out)]) == 0
    assert (out / "checkpoints" / "final.json").is_file() and (out / "checkpoints" / "epoch_002.bin").is_file()
    assert len((out / "train.log").read_text().splitlines()) >= 2
    assert main(["infer", "--data", str(out / "data"), "--split", "all", "--out", str(out)]) == 0
    assert (out / "detections.tsv").read_text().startswith("video_id\t")
    assert main(["eval", "--config", str(cfg), "--data", str(out / "data"), "--split", "all",
                 "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "ok" and 0.0 <= report["average_map"] <= 1.0
    assert main(["infer", "--checkpoint", str(out / "missing"), "--out", str(out)]) == 2
