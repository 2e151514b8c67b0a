import json
from dataclasses import replace

import pytest

from rest_mot import dataio
from rest_mot.cli import main


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(d / "corpus"), "--frames", "12", "--identities", "3", "--seed", "4"]) == 0
    assert main(["synth", "--out", str(d / "held"), "--frames", "8", "--identities", "3", "--seed", "5"]) == 0
    assert main(["train", "--corpus", str(d / "corpus"), "--out", str(d / "model"), "--epochs", "2",
                 "--warmup-epochs", "1"]) == 0
    return d


def test_synth_writes_corpus(run_dir, capsys):
    c = run_dir / "corpus"
    assert {p.name for p in c.iterdir()} == {"detections.jsonl", "calibration.json", "gt.csv", "scene.json"}
    assert json.loads((c / "scene.json").read_text())["frames"] == 12
    assert dataio.read_json(c / "calibration.json")["image_size"] == [1280, 720]


def test_train_outputs(run_dir):
    m = run_dir / "model"
    log = dataio.read_jsonl(m / "train_log.jsonl")
    assert [r["epoch"] for r in log] == [1, 2]
    assert set(dataio.read_weights(m / "weights.bin")) == {"spatial", "temporal"}
    assert dataio.read_json(m / "run_config.json")["epochs"] == 2


def test_track_and_eval(run_dir, capsys):
    held, out = run_dir / "held", run_dir / "trk"
    assert main(["track", "--detections", str(held / "detections.jsonl"), "--calibration",
                 str(held / "calibration.json"), "--weights", str(run_dir / "model" / "weights.bin"),
                 "--out", str(out)]) == 0
    assert "frames=8" in capsys.readouterr().out
    tracks = dataio.read_tracks(out / "tracks.csv")
    n_det = sum(len(r) for _, r in dataio.parse_detections(held / "detections.jsonl"))
    assert len(tracks) == n_det
    for cam in range(4):
        rows = dataio.parse_mot(out / f"cam{cam}.txt")
        assert len(rows) == sum(t.camera_id == cam for t in tracks)
    assert main(["eval", "--gt", str(held / "gt.csv"), "--hyp", str(out / "tracks.csv"),
                 "--report", str(out / "report.json")]) == 0
    assert "IDF1" in capsys.readouterr().out
    rep = dataio.read_json(out / "report.json")
    assert 0.0 <= rep["idf1"] <= 1.0


def test_track_several_sequences_in_parallel(run_dir):
    held = run_dir / "held"
    other = run_dir / "other.jsonl"
    other.write_text((held / "detections.jsonl").read_text())
    out = run_dir / "multi"
    args = ["track", "--detections", str(held / "detections.jsonl"), "--detections", str(other), "--calibration",
            str(held / "calibration.json"), "--weights", str(run_dir / "model" / "weights.bin"), "--out", str(out),
            "--jobs", "2"]
    assert main(args) == 0
    a = (out / "detections" / "tracks.csv").read_bytes()
    assert a == (out / "other" / "tracks.csv").read_bytes()


@pytest.mark.parametrize("argv", [
    ["train", "--out", "x"],
    ["train", "--corpus", "/nonexistent", "--out", "x"],
    ["synth", "--out", "x", "--occlusion-drop", "1.5"],
    ["eval", "--gt", "/nonexistent.csv", "--hyp", "/nonexistent.csv"],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_bad_config_exits_2(run_dir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"window": 1}')
    assert main(["train", "--corpus", str(run_dir / "corpus"), "--out", str(tmp_path / "m"), "--config",
                 str(cfg)]) == 2


def test_runtime_failures_exit_1(run_dir, tmp_path, capsys):
    held = run_dir / "held"
    bad = tmp_path / "w.bin"
    bad.write_bytes(b"garbage")
    assert main(["track", "--detections", str(held / "detections.jsonl"), "--calibration",
                 str(held / "calibration.json"), "--weights", str(bad), "--out", str(tmp_path / "t")]) == 1
    assert "WeightsError" in capsys.readouterr().err
    gt = held / "gt.csv"
    hyp = tmp_path / "h.csv"
    rows = dataio.read_tracks(gt)
    # a hypothesis frame outside the ground-truth range is a runtime FrameMismatch
    dataio.write_tracks(hyp, [replace(rows[0], frame=rows[-1].frame + 100)])
    assert main(["eval", "--gt", str(gt), "--hyp", str(hyp)]) == 1


def test_argparse_rejects_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 2
