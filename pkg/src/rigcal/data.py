"""Containers for rendered sequences and ego-motion observations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Intrinsics
from .errors import InvalidArgumentError
from .geometry import SE3Pose
from .losses import EgoMotionObservation


@dataclass
class RenderedFrame:
    image: np.ndarray
    depth: np.ndarray
    intrinsics: Intrinsics
    timestamp: float


@dataclass
class SequenceData:
    """Synchronised frames of one sequence.

    ``images`` is (T, N, H, W, 3) and ``depths`` (T, N, H, W); camera ``i``
    uses ``intrinsics[i]``.
    """

    images: np.ndarray
    depths: np.ndarray
    intrinsics: list
    dt: float
    timestamps: np.ndarray = None

    def __post_init__(self):
        if self.images.shape[:2] != self.depths.shape[:2]:
            raise InvalidArgumentError("images and depths disagree on (T, N)")
        if self.timestamps is None:
            self.timestamps = np.arange(self.images.shape[0]) * self.dt

    @property
    def n_frames(self):
        return self.images.shape[0]

    @property
    def n_cameras(self):
        return self.images.shape[1]

    def frame(self, t, camera) -> RenderedFrame:
        return RenderedFrame(self.images[t, camera], self.depths[t, camera],
                             self.intrinsics[camera], float(self.timestamps[t]))


@dataclass
class ObservationSet:
    """Ego-motion observations as dense arrays, one row per (sequence, t, tau) group.

    ``rotations`` (G, N, 3, 3), ``translations`` (G, N, 3), ``speeds`` (G, N),
    ``present`` (G, N) marks which cameras observed the group.
    """

    keys: list
    rotations: np.ndarray
    translations: np.ndarray
    speeds: np.ndarray
    present: np.ndarray = None

    def __post_init__(self):
        self.keys = [tuple(int(x) for x in k) for k in self.keys]
        if self.present is None:
            self.present = np.ones(self.speeds.shape, dtype=bool)

    def __len__(self):
        return len(self.keys)

    @property
    def n_cameras(self):
        return self.rotations.shape[1]

    @property
    def sequence_index(self):
        return np.array([k[0] for k in self.keys], dtype=int)

    def subset(self, rows):
        rows = np.asarray(rows, dtype=int)
        return ObservationSet([self.keys[r] for r in rows], self.rotations[rows].copy(),
                              self.translations[rows].copy(), self.speeds[rows].copy(),
                              self.present[rows].copy())

    def copy(self):
        return self.subset(np.arange(len(self)))

    @classmethod
    def from_observations(cls, observations, n_cameras):
        by_key = {}
        for ob in observations:
            by_key.setdefault(ob.group, {})[ob.camera_id] = ob
        keys = sorted(by_key)
        g = len(keys)
        rot = np.tile(np.eye(3), (g, n_cameras, 1, 1))
        tra = np.zeros((g, n_cameras, 3))
        spd = np.zeros((g, n_cameras))
        present = np.zeros((g, n_cameras), dtype=bool)
        for r, k in enumerate(keys):
            for cam, ob in by_key[k].items():
                rot[r, cam] = ob.pose.rotation
                tra[r, cam] = ob.pose.translation
                spd[r, cam] = ob.speed
                present[r, cam] = True
        return cls(keys, rot, tra, spd, present)

    def to_observations(self):
        out = []
        for r, (s, t, tau) in enumerate(self.keys):
            for cam in range(self.n_cameras):
                if self.present[r, cam]:
                    out.append(EgoMotionObservation(cam, t, tau, SE3Pose(self.rotations[r, cam],
                                                                          self.translations[r, cam]),
                                                    float(self.speeds[r, cam]), s))
        return out


@dataclass
class Dataset:
    sequences: list
    observations: ObservationSet
    meta: dict = field(default_factory=dict)

    @property
    def n_cameras(self):
        return self.observations.n_cameras
