import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rigcal.errors import InvalidArgumentError
from rigcal.experiment import ConfigError, ExperimentConfig, RigSpec, TrajectorySpec, simulate
from rigcal.simulator import NoiseModel
from rigcal.storage import read_manifest, read_pfm, read_sequence, write_pfm, write_sequence


def small_config(**kw):
    return ExperimentConfig(trajectory=TrajectorySpec(n_frames=6, turn_deg=20),
                            rig=RigSpec(layout="stereo", width=20, height=12), **kw)


@given(arrays(np.float32, st.tuples(st.integers(1, 9), st.integers(1, 9)),
              elements=st.floats(-1e6, 1e6, width=32) | st.just(np.float32(np.nan))))
def test_pfm_round_trip_grey(tmp_path_factory, a):
    path = tmp_path_factory.mktemp("pfm") / "a.pfm"
    write_pfm(path, a)
    assert np.array_equal(read_pfm(path), a.astype(float), equal_nan=True)


def test_pfm_round_trip_colour(tmp_path):
    a = np.random.default_rng(0).random((5, 7, 3)).astype(np.float32)
    write_pfm(tmp_path / "c.pfm", a)
    b = read_pfm(tmp_path / "c.pfm")
    assert b.shape == (5, 7, 3) and np.array_equal(b, a.astype(float))


def test_pfm_rejects_bad_input(tmp_path):
    with pytest.raises(InvalidArgumentError):
        write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 2)))
    (tmp_path / "y.pfm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(InvalidArgumentError):
        read_pfm(tmp_path / "y.pfm")


def test_config_round_trip():
    cfg = ExperimentConfig(seed=4, noise=NoiseModel(0.001, 0.002, 1.1, 0.01, seed=8), skip_stages=["end-to-end"],
                           stages_override={"RotationEstimation": {"epochs": 3}})
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg and back.to_json() == cfg.to_json()


@pytest.mark.parametrize("text", [
    '{"colour": 1}',
    '{"rig": {"layout": "ddad", "lens": "fisheye"}}',
    '{"rig": {"layout": "octocopter"}}',
    '{"trajectory": {"kind": "loop"}}',
    '{"trajectory": {"n_frames": 5}}',
    '{"schema_version": 2}',
    '{"skip_stages": ["warmup"]}',
    '{"stages_override": {"EndToEnd": {"momentum": 0.9}}}',
    '{"noise": {"rotation_std": -1}}',
    '[1, 2]',
    '{not json',
])
def test_bad_configs_are_rejected(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(text)


def test_default_config_uses_two_turn_ddad_scene():
    cfg = ExperimentConfig()
    assert cfg.trajectory.kind == "two_turn" and cfg.trajectory.n_frames == 50
    assert cfg.rig.layout == "ddad" and (cfg.rig.width, cfg.rig.height) == (160, 96)
    names = [s.name for s in cfg.stages()]
    assert names == ["MonodepthPretraining", "RotationEstimation", "ExtrinsicEstimation", "EndToEnd"]


def test_sequence_round_trip(tmp_path):
    cfg = small_config(noise=NoiseModel(0.001, 0.001, seed=2))
    p = simulate(cfg)
    write_sequence(tmp_path, p.sequence, p.observations, p.truth, p.trajectory, p.scene, cfg.to_dict())
    seq, obs, truth, manifest = read_sequence(tmp_path)
    assert np.array_equal(seq.images, p.sequence.images.astype(np.float32).astype(float))
    assert np.array_equal(seq.depths, p.sequence.depths.astype(np.float32).astype(float), equal_nan=True)
    assert seq.intrinsics == p.sequence.intrinsics and seq.dt == p.sequence.dt
    assert obs.keys == p.observations.keys
    assert np.array_equal(obs.rotations, p.observations.rotations)
    assert np.array_equal(obs.translations, p.observations.translations)
    assert np.array_equal(truth.base, p.truth.base)
    assert ExperimentConfig.from_dict(manifest["config"]) == cfg
    assert manifest["scene"]["seed"] == cfg.scene.seed


def test_manifest_errors(tmp_path):
    with pytest.raises(OSError):
        read_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps({"schema_version": 99}))
    with pytest.raises(InvalidArgumentError):
        read_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text("{")
    with pytest.raises(InvalidArgumentError):
        read_manifest(tmp_path)


def test_missing_frame_is_an_io_error(tmp_path):
    cfg = small_config()
    p = simulate(cfg)
    write_sequence(tmp_path, p.sequence, p.observations, p.truth, p.trajectory)
    (tmp_path / "cam_1" / "image_000002.pfm").unlink()
    with pytest.raises(OSError, match="cannot read sequence"):
        read_sequence(tmp_path)
