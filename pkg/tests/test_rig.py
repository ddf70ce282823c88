import math

import numpy as np
import pytest

from rigcal.errors import InvalidArgumentError
from rigcal.geometry import SE3Pose, euler_to_rotation, params_to_se3
from rigcal.gradients import ParamLayout
from rigcal.rig import BACK_INIT, RigConfig, effective_extrinsics, euler_extrinsics, init_extrinsics
from rigcal.simulator import ddad_like_rig, stereo_rig


def test_reference_camera_is_identity():
    rig = ddad_like_rig()
    assert effective_extrinsics(rig, 0).allclose(SE3Pose.identity(), 0)
    with pytest.raises(InvalidArgumentError):
        RigConfig(2, np.ones((2, 6)))


def test_zero_residual_gives_base():
    rig = ddad_like_rig()
    assert effective_extrinsics(rig, 3).allclose(params_to_se3(rig.base[3]), 0)


def test_additive_residual():
    base = np.zeros((2, 6))
    base[1, 2] = 0.1
    res = np.zeros((2, 2, 6))
    res[1, 1, 2] = 0.02
    rig = RigConfig(2, base, res)
    assert rig.n_sequences == 2
    assert np.allclose(effective_extrinsics(rig, 1, 1).rotation, euler_to_rotation(0, 0, 0.12), atol=1e-15)
    assert np.allclose(effective_extrinsics(rig, 1, 0).rotation, euler_to_rotation(0, 0, 0.1), atol=1e-15)
    assert euler_extrinsics(rig, 1, 1).psi == pytest.approx(0.12)


def test_index_errors():
    rig = ddad_like_rig()
    with pytest.raises(InvalidArgumentError):
        effective_extrinsics(rig, 6)
    with pytest.raises(InvalidArgumentError):
        effective_extrinsics(rig, 1, 1)


def test_init_ddad_like_has_one_back_camera():
    init = init_extrinsics(ddad_like_rig())
    flipped = [i for i in range(6) if np.allclose(init.base[i, :3], BACK_INIT)]
    assert flipped == [5]
    assert np.all(init.base[:, 3:] == 0.0)
    assert np.all(init.base[:5] == 0.0)
    assert np.all(init.residuals == 0.0)


def test_init_stereo_all_zero():
    assert np.all(init_extrinsics(stereo_rig()).base == 0.0)


def test_init_all_back_facing():
    rig = RigConfig(3, back_facing=[True, True, True], reference_camera=1)
    init = init_extrinsics(rig)
    assert np.allclose(init.base[[0, 2], :3], [BACK_INIT, BACK_INIT])
    # the reference camera defines the frame and cannot be flipped
    assert np.all(init.base[1] == 0.0)


def test_init_does_not_touch_input():
    rig = ddad_like_rig()
    before = rig.base.copy()
    init_extrinsics(rig)
    assert np.array_equal(rig.base, before)


def test_serialisation_round_trip():
    rig = ddad_like_rig()
    rig.residuals = np.zeros((6, 2, 6))
    rig.n_sequences = 2
    rig.residuals[2, 1] = 0.01
    back = RigConfig.from_dict(rig.to_dict())
    assert np.array_equal(back.base, rig.base) and np.array_equal(back.residuals, rig.residuals)
    assert back.names == rig.names and back.spatial_pairs == rig.spatial_pairs
    assert back.back_facing == rig.back_facing


def test_neighbours():
    rig = ddad_like_rig()
    assert rig.neighbours(0) == [1, 2]
    assert rig.neighbours(5) == [3, 4]
    with pytest.raises(InvalidArgumentError):
        RigConfig(2, spatial_pairs=[(0, 0)])


def test_reference_parameters_are_masked():
    lay = ParamLayout(4, 2, 5, reference_camera=0)
    m = lay.mask({"rotation", "translation"}, learn_residuals=True)
    base, res, ego, depth = lay.unpack(m)
    assert not base[0].any() and not res[0].any()
    assert base[1:].all() and res[1:].all()
    assert not ego.any() and not depth.any()
    m = lay.mask({"rotation"})
    base, res, _, _ = lay.unpack(m)
    assert base[1:, :3].all() and not base[:, 3:].any() and not res.any()
