import json
import shutil
import subprocess

import numpy as np
import pytest

from rigcal.cli import main
from rigcal.evaluation import read_ply

SMALL = {"trajectory": {"n_frames": 6, "turn_deg": 30}, "rig": {"layout": "stereo", "width": 32, "height": 20},
         "stages_override": {"rotation-estimation": {"epochs": 1}, "extrinsic-estimation": {"epochs": 1},
                             "end-to-end": {"epochs": 1}}}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_simulate_is_byte_identical(tmp_path, config):
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(config), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a.keys() == b.keys() and "manifest.json" in a and a == b
    manifest = json.loads(a["manifest.json"])
    assert manifest["config"]["scene"]["seed"] == 7 and manifest["config"]["noise"]["seed"] == 7


def test_simulate_seed_changes_the_scene(tmp_path, config):
    main(["simulate", "--config", str(config), "--seed", "7", "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(config), "--seed", "8", "--out", str(tmp_path / "b")])
    assert tree_bytes(tmp_path / "a")["cam_0/image_000000.pfm"] != tree_bytes(tmp_path / "b")["cam_0/image_000000.pfm"]


def test_calibrate_evaluate_export(tmp_path, config, capsys):
    data, out = tmp_path / "data", tmp_path / "run"
    assert main(["simulate", "--config", str(config), "--out", str(data)]) == 0
    assert main(["calibrate", "--config", str(config), "--data", str(data), "--out", str(out)]) == 0
    for name in ("checkpoint.json", "report.json", "errors.csv", "config.json",
                 "checkpoint_RotationEstimation.json", "checkpoint_EndToEnd.json"):
        assert (out / name).exists(), name
    capsys.readouterr()
    assert main(["evaluate", "--checkpoint", str(out / "checkpoint.json"), "--truth", str(data),
                 "--csv", str(tmp_path / "e.csv")]) == 0
    table = capsys.readouterr().out
    assert "t [m]" in table and "R [deg]" in table and "right" in table
    assert main(["export", "--checkpoint", str(out / "checkpoint.json"), "--data", str(data), "--frame", "2",
                 "--out", str(tmp_path / "cloud.ply"), "--poses", str(tmp_path / "poses.json")]) == 0
    pts, _ = read_ply(tmp_path / "cloud.ply")
    assert len(pts) == 2 * 32 * 20
    poses = json.loads((tmp_path / "poses.json").read_text())
    assert np.allclose(poses["left"], np.eye(4))


def test_evaluate_truth_gives_zero_table(tmp_path, config, capsys):
    data = tmp_path / "data"
    main(["simulate", "--config", str(config), "--out", str(data)])
    manifest = json.loads((data / "manifest.json").read_text())
    (tmp_path / "truth.json").write_text(json.dumps({"rig": manifest["rig_truth"]}))
    capsys.readouterr()
    assert main(["evaluate", "--checkpoint", str(tmp_path / "truth.json"), "--truth", str(data)]) == 0
    rows = capsys.readouterr().out.splitlines()
    values = [cell for line in rows[2:] for cell in line.split()[-2:]]
    assert values and all(v == "0.000" for v in values)


def test_calibrate_is_deterministic(tmp_path, config):
    for name in ("a", "b"):
        assert main(["calibrate", "--config", str(config), "--seed", "3", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "checkpoint.json").read_bytes() == (tmp_path / "b" / "checkpoint.json").read_bytes()


def test_skip_stage_flag(tmp_path, config):
    out = tmp_path / "run"
    assert main(["calibrate", "--config", str(config), "--skip-stage", "rotation-estimation", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["skipped"] == ["RotationEstimation"]
    assert "RotationEstimation" not in [s["stage"] for s in report["stages"]]
    assert not (out / "checkpoint_RotationEstimation.json").exists()


def test_invalid_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"rig": {"layout": "octocopter"}}')
    assert main(["calibrate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "octocopter" in capsys.readouterr().err


def test_divergence_exit_code(tmp_path):
    cfg = dict(SMALL, stages_override={"rotation-estimation": {"epochs": 1},
                                       "extrinsic-estimation": {"optimizer": "sgd", "lr_extrinsics": 50.0,
                                                                "epochs": 3}})
    path = tmp_path / "wild.json"
    path.write_text(json.dumps(cfg))
    assert main(["calibrate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_io_exit_codes(tmp_path, config):
    assert main(["calibrate", "--config", str(tmp_path / "missing.json")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["calibrate", "--config", str(config), "--out", str(blocker / "run")]) == 3
    assert main(["evaluate", "--checkpoint", str(tmp_path / "none.json"), "--truth", str(tmp_path)]) == 3


def test_unknown_stage_is_rejected_by_the_parser():
    with pytest.raises(SystemExit):
        main(["calibrate", "--skip-stage", "warmup"])


@pytest.mark.skipif(shutil.which("rigcal") is None, reason="console script not installed")
def test_console_script(tmp_path, config):
    res = subprocess.run(["rigcal", "simulate", "--config", str(config), "--out", str(tmp_path / "s"), "-v"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "wrote 6 frames x 2 cameras" in res.stdout
