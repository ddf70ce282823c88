"""Why the back camera must start turned around.

On a straight drive every camera moves along one axis and never rotates, so
a rotation about the driving direction leaves the transferred ego-motion
unchanged. A back camera initialised facing forward therefore sees no
gradient on its last Euler angle and rotation estimation cannot fix it.
Starting it facing backwards puts it in the right basin. Takes a few seconds.

    python demos/straight_line_degeneracy.py
"""

import math

from rigcal.curriculum import CalibrationState, run_stage
from rigcal.data import Dataset
from rigcal.experiment import ExperimentConfig, RigSpec, TrajectorySpec, initial_rig
from rigcal.geometry import angle_difference
from rigcal.gradients import ParamLayout, grad_pose_consistency
from rigcal.simulator import NoiseModel, observe_egomotion

cfg = ExperimentConfig(trajectory=TrajectorySpec(kind="straight"), rig=RigSpec(layout="straight"))
traj = cfg.trajectory.build()
truth = cfg.rig.truth(cfg.trajectory.mount_pitch)
obs = observe_egomotion(traj, truth, NoiseModel(), normalize=False)
pretraining, rotation_estimation = cfg.stages()[:2]
back = truth.back_facing.index(True)

for init in ("zero", "flip"):
    state = CalibrationState(initial_rig(truth, init), Dataset([], obs.copy(), {"dt": traj.dt}), truth=truth)
    run_stage(pretraining, state)
    g = grad_pose_consistency(state.dataset.observations, state.rig)
    d_psi = ParamLayout(truth.n_cameras, 1, len(state.dataset.observations)).unpack(g.values)[0][back, 2]
    before = abs(angle_difference(state.rig.base[back, 2], truth.base[back, 2]))
    run_stage(rotation_estimation, state)
    after = abs(angle_difference(state.rig.base[back, 2], truth.base[back, 2]))
    print(f"{init:4s} init: dL/dpsi = {d_psi:+.2e}, psi error {math.degrees(before):6.1f} -> {math.degrees(after):6.2f} deg")
