"""Pose-consistency objective and velocity-based scale normalisation."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTranslationError, InvalidArgumentError
from .geometry import SE3Pose, geodesic_angle, transfer_pose

EPS_NORM = 1e-6


@dataclass(frozen=True)
class PoseConsistencyWeights:
    alpha_t: float = 1.0
    alpha_r: float = 1.0

    def __post_init__(self):
        if self.alpha_t < 0 or self.alpha_r < 0:
            raise InvalidArgumentError("pose consistency weights must be >= 0")


@dataclass(frozen=True)
class EgoMotionObservation:
    """Camera motion from frame ``frame`` to the adjacent frame ``context``.

    ``pose`` maps camera coordinates at ``frame`` to camera coordinates at
    ``context``; ``speed`` is the camera's speed in m/s.
    """

    camera_id: int
    frame: int
    context: int
    pose: SE3Pose
    speed: float
    sequence: int = 0

    def __post_init__(self):
        if abs(self.context - self.frame) != 1:
            raise InvalidArgumentError("context frame must be adjacent to the target frame")
        if not (np.all(np.isfinite(self.pose.rotation)) and np.all(np.isfinite(self.pose.translation))):
            raise InvalidArgumentError("observation pose must be finite")

    @property
    def group(self):
        return (self.sequence, self.frame, self.context)


def translation_loss(t_ref, t_other):
    d = np.asarray(t_ref, dtype=float) - np.asarray(t_other, dtype=float)
    return float(d @ d)


def rotation_loss(r_ref, r_other):
    return geodesic_angle(r_ref, r_other)


def group_observations(observations):
    """Bucket observations by (sequence, frame, context), sorted by key."""
    groups = defaultdict(dict)
    for ob in observations:
        groups[ob.group][ob.camera_id] = ob
    return dict(sorted(groups.items()))


def pose_consistency_loss(observations, rig, w: PoseConsistencyWeights = PoseConsistencyWeights()):
    """Weighted translation + geodesic rotation disagreement between cameras.

    Every camera's motion is transferred into the reference camera's frame
    with the rig's current extrinsics and compared with the reference
    camera's own observation. Summed over cameras, averaged over groups.
    """
    groups = group_observations(observations)
    if not groups:
        raise InvalidArgumentError("no observations")
    ref = rig.reference_camera
    total = 0.0
    for key, cams in groups.items():
        if ref not in cams:
            raise InvalidArgumentError(f"group {key} lacks the reference camera {ref}")
        if len(cams) < 2:
            raise InvalidArgumentError(f"group {key} has no camera besides the reference")
        seq = key[0]
        x_ref = rig.extrinsics(ref, seq)
        anchor = cams[ref].pose
        for cam in sorted(cams):
            if cam == ref:
                continue
            moved = transfer_pose(cams[cam].pose, rig.extrinsics(cam, seq), x_ref)
            total += w.alpha_t * translation_loss(anchor.translation, moved.translation)
            total += w.alpha_r * rotation_loss(anchor.rotation, moved.rotation)
    return total / len(groups)


def scale_translation(pose: SE3Pose, speed, dt, eps=EPS_NORM) -> SE3Pose:
    """Rescale the translation of ``pose`` to length ``speed * dt``."""
    t = pose.translation
    n = float(np.linalg.norm(t))
    if not n > eps:
        raise DegenerateTranslationError(f"translation norm {n:.3g} m is too small to normalise")
    return SE3Pose(pose.rotation, t * (speed * dt / n))
