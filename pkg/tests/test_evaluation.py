import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_pose
from rigcal.errors import InvalidArgumentError
from rigcal.geometry import SE3Pose, rot_y
from rigcal.evaluation import (CalibrationError, calibration_error, export_pointcloud, format_table,
                               plane_fit_residual, pointcloud, read_ply, table_csv)
from rigcal.rig import RigConfig
from rigcal.simulator import Box, Scene, ddad_like_rig, default_intrinsics, render_frame, stereo_rig


class Reframed:
    """A rig whose extrinsics are all re-expressed in another vehicle frame."""

    def __init__(self, rig, g):
        self.rig, self.g = rig, g
        self.n_cameras, self.reference_camera, self.names = rig.n_cameras, rig.reference_camera, rig.names

    def extrinsics(self, i, sequence=0):
        return self.g @ self.rig.extrinsics(i, sequence)


def wall_scene():
    return Scene([], Box(np.array([-60.0, -60.0, -60.0]), np.array([60.0, 60.0, 10.0]), np.ones(3)),
                 ground_y=59.0, seed=4)


def test_truth_against_itself_is_zero():
    rig = ddad_like_rig()
    err = calibration_error(rig, rig.copy())
    assert np.all(err.translation == 0) and np.all(err.rotation == 0)
    assert err.avg_translation == 0 and err.avg_rotation == 0


def test_translation_offset():
    truth = ddad_like_rig()
    est = truth.copy()
    est.base[2, 3] += 0.1
    err = calibration_error(est, truth)
    assert err.translation[2] == pytest.approx(0.1, abs=1e-12)
    assert np.all(np.delete(err.translation, 2) == 0) and np.all(err.rotation == 0)


def test_one_degree_yaw():
    truth = ddad_like_rig()
    est = truth.copy()
    est.base[1, :3] = 0.0
    truth.base[1, :3] = 0.0
    est.base[1, 1] = math.radians(1.0)
    err = calibration_error(est, truth)
    assert err.rotation[1] == pytest.approx(1.0, abs=1e-9)
    assert np.all(err.translation == 0)


def test_mismatched_rigs_raise():
    with pytest.raises(InvalidArgumentError):
        calibration_error(stereo_rig(), ddad_like_rig())


@given(st.integers(0, 2 ** 31))
def test_invariant_to_common_vehicle_frame(seed):
    rng = np.random.default_rng(seed)
    truth = ddad_like_rig()
    est = truth.copy()
    est.base[1:] += rng.normal(scale=0.05, size=(5, 6))
    g = random_pose(rng, 3.0, 5.0)
    a = calibration_error(est, truth)
    b = calibration_error(Reframed(est, g), Reframed(truth, g))
    assert np.allclose(a.translation, b.translation, atol=1e-9)
    assert np.allclose(a.rotation, b.rotation, atol=1e-6)


def test_averages_exclude_reference():
    err = CalibrationError(["a", "b", "c"], np.array([5.0, 1.0, 2.0]), np.array([9.0, 0.5, 1.5]))
    assert err.avg_translation == 1.5 and err.avg_rotation == 1.0


def test_table_averages_match_recomputation():
    truth = ddad_like_rig()
    est = truth.copy()
    est.base[1:] += np.random.default_rng(3).normal(scale=0.02, size=(5, 6))
    err = calibration_error(est, truth)
    rows = list(csv.reader(io.StringIO(table_csv(err))))
    assert rows[0] == ["Metric", "front_left", "front_right", "back_left", "back_right", "back", "Avg."]
    t = [float(v) for v in rows[1][1:-1]]
    assert float(rows[1][-1]) == pytest.approx(round(np.mean(err.translation[1:]), 3), abs=1e-12)
    assert float(rows[2][-1]) == pytest.approx(round(np.mean(err.rotation[1:]), 3), abs=1e-12)
    assert t == [round(v, 3) for v in err.translation[1:]]
    text = format_table(err, "title")
    assert text.splitlines()[0] == "title" and "Avg." in text and "t [m]" in text and "R [deg]" in text


def test_single_camera_identity_cloud_equals_unprojection():
    k = default_intrinsics(24, 16, 60.0)
    f = render_frame(wall_scene(), SE3Pose.identity(), k)
    pts, cols = pointcloud([f], RigConfig(1))
    assert np.allclose(pts[:, 2], 10.0, atol=1e-12)
    assert len(pts) == 24 * 16 and cols.shape == (24 * 16, 3)


def test_plane_cloud_is_coplanar(tmp_path):
    k = default_intrinsics(24, 16, 60.0)
    f = render_frame(wall_scene(), SE3Pose.identity(), k)
    pts, _ = export_pointcloud([f], RigConfig(1), path=tmp_path / "wall.ply")
    assert plane_fit_residual(pts) < 1e-6
    back, cols = read_ply(tmp_path / "wall.ply")
    assert np.allclose(back, pts, atol=1e-6) and cols.min() >= 0 and cols.max() <= 1


def two_camera_wall():
    k = default_intrinsics(24, 16, 60.0)
    rig = RigConfig(2, np.array([np.zeros(6), [0.0, math.radians(15.0), 0.0, 0.4, 0.02, 0.1]]))
    frames = [render_frame(wall_scene(), rig.extrinsics(i), k) for i in range(2)]
    return rig, frames


def test_two_cameras_coplanar_with_correct_extrinsics():
    rig, frames = two_camera_wall()
    pts, _ = pointcloud(frames, rig)
    assert plane_fit_residual(pts) < 1e-9


@pytest.mark.parametrize("param,delta", [(0, 0.02), (1, 0.02), (5, 0.2)])
def test_two_cameras_not_coplanar_with_wrong_extrinsics(param, delta):
    # shifts parallel to the wall keep it a plane, so only out-of-plane errors are probed
    rig, frames = two_camera_wall()
    bad = rig.copy()
    bad.base[1, param] += delta
    pts, _ = pointcloud(frames, bad)
    assert plane_fit_residual(pts) > 1e-3


def test_depth_override_and_frame_count():
    rig, frames = two_camera_wall()
    with pytest.raises(InvalidArgumentError):
        pointcloud(frames[:1], rig)
    pts, _ = pointcloud(frames, rig, depth=[f.depth * 2.0 for f in frames])
    assert np.allclose(pts[: 24 * 16, 2], 20.0)


def test_write_failure_names_the_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        export_pointcloud(two_camera_wall()[1], two_camera_wall()[0], path=blocker / "out.ply")


def test_rotation_frame_example():
    # rotation error is geodesic: yaw of the reference only cancels out
    truth = ddad_like_rig()
    g = SE3Pose(rot_y(0.3), np.zeros(3))
    err = calibration_error(Reframed(truth, g), truth)
    assert np.allclose(err.rotation, 0.0, atol=1e-6) and np.allclose(err.translation, 0.0, atol=1e-12)
