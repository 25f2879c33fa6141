from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import pytest

from equipose.cli import main
from equipose.lifting import read_pose_csv
from equipose.skeleton import default_skeleton


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def digest(root: Path, skip=()) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name not in skip}


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert main(["synth", "-o", str(root), "--n-subjects", "2", "--n-frames", "300",
                 "--noise-sigma", "1", "--seed", "3"]) == 0
    return root


def lift_args(data: Path, out: Path):
    return ["-o", out, "--calibration", data / "calibration.json", "--tracks-dir", data / "subjects",
            "--annotations", data / "annotations.csv"]


def test_synth_is_fast_and_byte_identical(tmp_path, capsys):
    t0 = time.perf_counter()
    code, _, _ = run(capsys, "synth", "-o", tmp_path / "a", "--n-subjects", "1", "--n-frames", "1000",
                     "--seed", "5", "--noise-sigma", "1")
    elapsed = time.perf_counter() - t0
    assert code == 0 and elapsed < 10.0
    run(capsys, "synth", "-o", tmp_path / "b", "--n-subjects", "1", "--n-frames", "1000", "--seed", "5",
        "--noise-sigma", "1")
    skip = {"config.resolved.json"}
    assert digest(tmp_path / "a", skip) == digest(tmp_path / "b", skip)
    cams = sorted((tmp_path / "a" / "subjects" / "S01" / "tracks").glob("*.csv"))
    assert len(cams) == 4
    # header plus one row per frame and keypoint
    assert len(cams[0].read_text().splitlines()) == 1 + 1000 * 28


def test_synth_zero_frames_is_config_error(tmp_path, capsys):
    code, _, err = run(capsys, "synth", "-o", tmp_path, "--n-frames", "0")
    assert code == 2 and err.startswith("error[config]:")


def test_lift_writes_one_pose_row_per_frame(tmp_path, capsys, small_data):
    code, _, err = run(capsys, "lift", *lift_args(small_data, tmp_path))
    assert code == 0, err
    for s in ("S01", "S02"):
        poses = read_pose_csv(tmp_path / "poses" / f"{s}.csv", default_skeleton())
        assert poses.n_frames == 300
        assert (tmp_path / "stats" / f"{s}.txt").read_text()
    assert run(capsys, "stats", "-o", tmp_path)[0] == 0


def test_missing_calibration(tmp_path, capsys, small_data):
    code, _, err = run(capsys, "lift", "-o", tmp_path, "--calibration", tmp_path / "nope.json",
                       "--tracks-dir", small_data / "subjects")
    assert code == 2
    assert err.startswith("error[config]:") and len(err.strip().splitlines()) == 1


def test_unset_calibration(tmp_path, capsys):
    code, _, err = run(capsys, "lift", "-o", tmp_path)
    assert code == 2 and "calibration" in err


def test_corrupt_track_row(tmp_path, capsys, small_data):
    tracks = tmp_path / "tracks"
    tracks.mkdir()
    for f in (small_data / "subjects" / "S01" / "tracks").iterdir():
        (tracks / f.name).write_bytes(f.read_bytes())
    victim = tracks / "cam2.csv"
    lines = victim.read_text().splitlines()
    lines[3] = lines[3].replace(",", ",oops", 1)
    victim.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "lift", "-o", tmp_path / "out", "--calibration",
                       small_data / "calibration.json", "--tracks-dir", tracks)
    assert code == 3
    assert err.startswith("error[parse]:") and "row 4" in err


def test_zero_frame_tracks(tmp_path, capsys, small_data):
    tracks = tmp_path / "tracks"
    tracks.mkdir()
    for f in (small_data / "subjects" / "S01" / "tracks").iterdir():
        if f.suffix == ".csv":
            text = f.read_text().splitlines()[0] + "\n"
        else:
            text = json.dumps({**json.loads(f.read_text()), "n_frames": 0})
        (tracks / f.name).write_text(text)
    code, _, err = run(capsys, "lift", "-o", tmp_path / "out", "--calibration",
                       small_data / "calibration.json", "--tracks-dir", tracks)
    assert code == 2 and "zero frames" in err


def test_eval_before_train(tmp_path, capsys):
    code, _, err = run(capsys, "eval", "-o", tmp_path)
    assert code == 5 and err.startswith("error[state]:")


def test_segments_before_lift(tmp_path, capsys, small_data):
    code, _, err = run(capsys, "segments", "-o", tmp_path, "--annotations",
                       small_data / "annotations.csv")
    assert code == 5 and err.startswith("error[state]:")


def test_bad_flags(tmp_path, capsys):
    assert run(capsys, "lift", "-o", tmp_path, "--medfilt-window", "4")[0] == 2
    assert run(capsys, "lift", "-o", tmp_path, "--likelihood-threshold", "1.5")[0] == 2
    assert run(capsys, "frobnicate")[0] == 2


def test_config_file_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_frames": 50, "n_subjects": 1, "seed": 9, "noise_sigma": 0.5}))
    out = tmp_path / "out"
    assert run(capsys, "synth", "--config", cfg, "-o", out, "--seed", "4")[0] == 0
    snap = json.loads((out / "config.resolved.json").read_text())
    assert snap["seed"] == 4 and snap["n_frames"] == 50 and snap["noise_sigma"] == 0.5
    assert snap["likelihood_threshold"] == 0.6 and snap["reproj_threshold_px"] == 200
    # the snapshot alone reproduces the run
    again = tmp_path / "again"
    assert run(capsys, "synth", "--config", out / "config.resolved.json", "-o", again)[0] == 0
    skip = {"config.resolved.json"}
    assert digest(out, skip) == digest(again, skip)


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_frame": 5}))
    code, _, err = run(capsys, "synth", "--config", cfg, "-o", tmp_path)
    assert code == 2 and "n_frame" in err


@pytest.fixture(scope="module")
def trainable(tmp_path_factory):
    root = tmp_path_factory.mktemp("trainable")
    data, out = root / "data", root / "out"
    assert main(["synth", "-o", str(data), "--n-subjects", "2", "--n-frames", "2500", "--seed", "1",
                 "--noise-sigma", "1"]) == 0
    args = [str(a) for a in lift_args(data, out)] + ["--arma-order", "0", "0", "--n-trees", "5"]
    assert main(["lift", *args]) == 0
    assert main(["segments", *args]) == 0
    return args, out


def test_same_seed_gives_identical_models(capsys, trainable):
    args, out = trainable
    assert run(capsys, "train", *args)[0] == 0
    first = {p.name: p.read_bytes() for p in (out / "models").glob("*.json")}
    assert set(first) == {"eating.json", "movement.json", "standing.json"}
    assert run(capsys, "train", *args, "--threads", "2")[0] == 0
    second = {p.name: p.read_bytes() for p in (out / "models").glob("*.json")}
    assert first == second
    assert run(capsys, "train", *args, "--seed", "99")[0] == 0
    assert {p.name: p.read_bytes() for p in (out / "models").glob("*.json")} != first
    doc = json.loads(first["eating.json"])
    assert doc["n_trees"] == 5 and doc["n_features"] == 84


def test_segments_file_layout(trainable):
    _, out = trainable
    lines = (out / "segments.csv").read_text().splitlines()
    assert lines[0] == "subject,pain_state,behavior,pair_id,label,start_frame,split"
    assert len(lines) > 1


def test_inlier_threshold_flag(tmp_path, capsys):
    assert run(capsys, "synth", "-o", tmp_path / "a", "--n-frames", "5", "--inlier-threshold-px", "off")[0] == 0
    assert json.loads((tmp_path / "a" / "config.resolved.json").read_text())["inlier_threshold_px"] is None
    assert run(capsys, "synth", "-o", tmp_path / "b", "--n-frames", "5", "--inlier-threshold-px", "7.5")[0] == 0
    assert json.loads((tmp_path / "b" / "config.resolved.json").read_text())["inlier_threshold_px"] == 7.5
    assert run(capsys, "synth", "-o", tmp_path / "c", "--inlier-threshold-px", "-2")[0] == 2
