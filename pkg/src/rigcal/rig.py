"""Learnable rig parameters: per-camera base extrinsics plus per-sequence residuals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .geometry import EulerExtrinsics, SE3Pose, params_to_se3

BACK_INIT = (math.pi, 0.0, math.pi)


@dataclass
class RigConfig:
    """Extrinsics of N cameras, each mapping camera coordinates to the vehicle frame.

    ``base`` has shape (N, 6) and ``residuals`` (N, S, 6); each row is
    ``(theta, phi, psi, tx, ty, tz)``. The reference camera defines the
    vehicle frame and stays at the identity.
    """

    n_cameras: int
    base: np.ndarray = None
    residuals: np.ndarray = None
    reference_camera: int = 0
    back_facing: list = None
    names: list = None
    n_sequences: int = 1
    spatial_pairs: list = field(default_factory=list)

    def __post_init__(self):
        n = int(self.n_cameras)
        if n < 1:
            raise InvalidArgumentError("a rig needs at least one camera")
        if not 0 <= self.reference_camera < n:
            raise InvalidArgumentError("reference camera index out of range")
        self.base = np.zeros((n, 6)) if self.base is None else np.array(self.base, dtype=float).reshape(n, 6)
        if self.residuals is None:
            self.residuals = np.zeros((n, self.n_sequences, 6))
        else:
            self.residuals = np.array(self.residuals, dtype=float).reshape(n, -1, 6)
            self.n_sequences = self.residuals.shape[1]
        self.back_facing = [False] * n if self.back_facing is None else [bool(b) for b in self.back_facing]
        self.names = [f"cam{i}" for i in range(n)] if self.names is None else list(self.names)
        if len(self.back_facing) != n or len(self.names) != n:
            raise InvalidArgumentError("per-camera lists must have n_cameras entries")
        self.spatial_pairs = [tuple(int(i) for i in p) for p in self.spatial_pairs]
        for i, j in self.spatial_pairs:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise InvalidArgumentError(f"bad spatial pair {(i, j)}")
        if np.any(self.base[self.reference_camera]) or np.any(self.residuals[self.reference_camera]):
            raise InvalidArgumentError("reference camera parameters must be zero")

    def copy(self):
        return RigConfig(self.n_cameras, self.base.copy(), self.residuals.copy(), self.reference_camera,
                         list(self.back_facing), list(self.names), self.n_sequences, list(self.spatial_pairs))

    def _check(self, camera, sequence):
        if not 0 <= camera < self.n_cameras:
            raise InvalidArgumentError(f"camera index {camera} out of range")
        if not 0 <= sequence < self.n_sequences:
            raise InvalidArgumentError(f"sequence index {sequence} out of range")

    def effective_params(self, camera, sequence=0):
        self._check(camera, sequence)
        return self.base[camera] + self.residuals[camera, sequence]

    def extrinsics(self, camera, sequence=0) -> SE3Pose:
        return params_to_se3(self.effective_params(camera, sequence))

    def neighbours(self, camera):
        """Cameras paired with ``camera`` for spatial photometric terms."""
        out = []
        for i, j in self.spatial_pairs:
            if i == camera:
                out.append(j)
            elif j == camera:
                out.append(i)
        return sorted(set(out))

    def to_dict(self):
        return {
            "n_cameras": self.n_cameras,
            "names": self.names,
            "reference_camera": self.reference_camera,
            "back_facing": self.back_facing,
            "spatial_pairs": [list(p) for p in self.spatial_pairs],
            "base": self.base.tolist(),
            "residuals": self.residuals.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["n_cameras"]), np.array(d["base"], dtype=float),
                   np.array(d["residuals"], dtype=float) if "residuals" in d else None,
                   int(d.get("reference_camera", 0)), d.get("back_facing"), d.get("names"),
                   spatial_pairs=[tuple(p) for p in d.get("spatial_pairs", [])])

    @classmethod
    def from_extrinsics(cls, extrinsics, **kwargs):
        """Build a rig from a list of :class:`EulerExtrinsics` (base only)."""
        base = np.stack([e.as_vector() for e in extrinsics])
        return cls(len(extrinsics), base, **kwargs)


def effective_extrinsics(rig: RigConfig, camera, sequence=0) -> SE3Pose:
    """``to_se3(base[camera] + residual[camera, sequence])``."""
    return rig.extrinsics(camera, sequence)


def init_extrinsics(rig: RigConfig) -> RigConfig:
    """Initial guess: zero translation, identity rotation except (pi, 0, pi) for back cameras."""
    out = rig.copy()
    out.base[:] = 0.0
    out.residuals[:] = 0.0
    for i, back in enumerate(out.back_facing):
        if back and i != out.reference_camera:
            out.base[i, :3] = BACK_INIT
    return out


def euler_extrinsics(rig: RigConfig, camera, sequence=0) -> EulerExtrinsics:
    return EulerExtrinsics.from_vector(rig.effective_params(camera, sequence))
