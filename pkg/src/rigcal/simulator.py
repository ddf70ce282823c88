"""Synthetic driving world: ray-cast imagery with exact depth and ego-motion.

World frame: x right, y down, z forward (camera style). The ground is the
plane ``y = ground_y``; obstacles are axis-aligned boxes; an enclosing box
(walls plus a textured ceiling) guarantees every ray hits something.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .camera import Intrinsics, pixel_rays
from .data import ObservationSet, RenderedFrame, SequenceData
from .errors import DegenerateTranslationError, InvalidArgumentError, InvalidPoseError
from .geometry import SE3Pose, euler_to_rotation, rot_x, rot_y, rot_z, rotation_to_euler, so3_exp
from .losses import scale_translation
from .rig import RigConfig

log = logging.getLogger(__name__)

MIN_COVERAGE = 0.6


# ---------------------------------------------------------------- scene

@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray
    tint: np.ndarray

    def contains(self, p):
        return bool(np.all(p > self.lo) and np.all(p < self.hi))


@dataclass
class Scene:
    boxes: list
    bounds: Box
    ground_y: float = 1.6
    ground_tint: np.ndarray = field(default_factory=lambda: np.array([0.55, 0.5, 0.45]))
    texture_frequency: float = 0.6
    contrast: float = 0.9
    octaves: int = 4
    seed: int = 0
    feature_size: float = 0.03

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        self._perm = rng.permutation(256).astype(np.intp)
        self._perm = np.concatenate([self._perm, self._perm])
        self._values = rng.random(256)
        self._offsets = rng.uniform(0, 100, size=(self.octaves, 3))
        self._wall_tints = rng.uniform(0.35, 0.9, size=(6, 3))

    def to_dict(self):
        return {
            "ground_y": self.ground_y, "texture_frequency": self.texture_frequency,
            "contrast": self.contrast, "octaves": self.octaves, "seed": self.seed,
            "feature_size": self.feature_size,
            "bounds": [self.bounds.lo.tolist(), self.bounds.hi.tolist()],
            "boxes": [[b.lo.tolist(), b.hi.tolist(), b.tint.tolist()] for b in self.boxes],
        }

    # value noise ------------------------------------------------------
    def _lattice(self, ix, iy, iz):
        p = self._perm
        return self._values[p[p[p[ix & 255] + (iy & 255)] + (iz & 255)]]

    def _noise(self, pts):
        i = np.floor(pts).astype(np.intp)
        f = pts - i
        w = f * f * f * (f * (f * 6.0 - 15.0) + 10.0)
        ix, iy, iz = i[:, 0], i[:, 1], i[:, 2]
        wx, wy, wz = w[:, 0], w[:, 1], w[:, 2]
        out = 0.0
        for dx in (0, 1):
            ax = wx if dx else 1.0 - wx
            for dy in (0, 1):
                ay = wy if dy else 1.0 - wy
                for dz in (0, 1):
                    az = wz if dz else 1.0 - wz
                    out = out + ax * ay * az * self._lattice(ix + dx, iy + dy, iz + dz)
        return out

    def texture(self, pts):
        """Intensity in [0, 1] at world points.

        Octaves are faded by a fixed world-space feature size, so a surface
        looks the same from every viewpoint (a footprint-dependent filter
        would make appearance change with distance and bias the photometric
        minimum).
        """
        total = np.zeros(len(pts))
        norm = 0.0
        freq, amp = self.texture_frequency, 1.0
        for k in range(self.octaves):
            fade = math.exp(-(2.0 * self.feature_size * freq) ** 2)
            total += amp * fade * (self._noise(pts * freq + self._offsets[k]) - 0.5)
            norm += amp
            freq *= 2.3
            amp *= 0.6
        return np.clip(0.5 + self.contrast * 1.6 * total / norm, 0.0, 1.0)

    # ray casting ------------------------------------------------------
    def check_camera(self, origin):
        if origin[1] >= self.ground_y:
            raise InvalidPoseError("camera below the ground plane")
        if not self.bounds.contains(origin):
            raise InvalidPoseError("camera outside the scene bounds")
        for b in self.boxes:
            if b.contains(origin):
                raise InvalidPoseError("camera inside an obstacle")

    def intersect(self, origin, dirs):
        """Nearest hit along ``origin + t * dirs``; returns (t, surface id, normal axis)."""
        m = len(dirs)
        best = np.full(m, np.inf)
        sid = np.full(m, -1)
        axis = np.zeros(m, dtype=np.intp)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            tg = (self.ground_y - origin[1]) * inv[:, 1]
            hit = (dirs[:, 1] > 0) & (tg > 0)
            best = np.where(hit, tg, best)
            sid = np.where(hit, 0, sid)
            axis = np.where(hit, 1, axis)
            # exit of the enclosing box
            t1 = (self.bounds.lo - origin) * inv
            t2 = (self.bounds.hi - origin) * inv
            tfar = np.where(dirs > 0, t2, t1)
            tfar = np.where(dirs == 0, np.inf, tfar)
            ax = np.argmin(tfar, axis=1)
            te = tfar[np.arange(m), ax]
            closer = te < best
            side = np.where(dirs[np.arange(m), ax] > 0, 1, 0)
            best = np.where(closer, te, best)
            sid = np.where(closer, 1 + 2 * ax + side, sid)
            axis = np.where(closer, ax, axis)
            if self.boxes:
                lo = np.stack([b.lo for b in self.boxes])
                hi = np.stack([b.hi for b in self.boxes])
                ta = (lo[None] - origin) * inv[:, None]
                tb = (hi[None] - origin) * inv[:, None]
                tmin = np.minimum(ta, tb)
                tmax = np.maximum(ta, tb)
                tmin = np.where(np.isnan(tmin), -np.inf, tmin)
                tmax = np.where(np.isnan(tmax), np.inf, tmax)
                tn = tmin.max(axis=2)
                tx = tmax.min(axis=2)
                ok = (tn <= tx) & (tn > 0)
                tn = np.where(ok, tn, np.inf)
                k = np.argmin(tn, axis=1)
                tk = tn[np.arange(m), k]
                closer = tk < best
                best = np.where(closer, tk, best)
                sid = np.where(closer, 7 + k, sid)
                axis = np.where(closer, np.argmax(tmin[np.arange(m), k], axis=1), axis)
        return best, sid, axis

    def tints(self, sid):
        table = np.vstack([self.ground_tint[None], self._wall_tints] + [b.tint[None] for b in self.boxes])
        return table[np.clip(sid, 0, None)]


def make_scene(vehicle_positions, seed=0, n_boxes=40, clearance=4.0, margin=12.0,
               wall_distance=28.0, height=40.0, ground_y=1.6, texture_frequency=0.6, contrast=0.9,
               feature_size=0.03) -> Scene:
    """Scatter obstacles around a path, keeping ``clearance`` metres free around it."""
    rng = np.random.default_rng(seed)
    pos = np.asarray(vehicle_positions, dtype=float)
    lo_xz = pos[:, [0, 2]].min(axis=0) - margin
    hi_xz = pos[:, [0, 2]].max(axis=0) + margin
    boxes = []
    tries = 0
    while len(boxes) < n_boxes and tries < 50 * n_boxes:
        tries += 1
        c = rng.uniform(lo_xz, hi_xz)
        half = rng.uniform([0.8, 0.8], [3.0, 3.0])
        h = rng.uniform(2.0, 9.0)
        # horizontal distance from every path point to the box footprint
        d = np.maximum(np.abs(pos[:, [0, 2]] - c) - half, 0.0)
        if np.min(np.hypot(d[:, 0], d[:, 1])) < clearance:
            continue
        lo = np.array([c[0] - half[0], ground_y - h, c[1] - half[1]])
        hi = np.array([c[0] + half[0], ground_y + 0.5, c[1] + half[1]])
        boxes.append(Box(lo, hi, rng.uniform(0.3, 0.95, size=3)))
    blo = np.array([lo_xz[0] - wall_distance, ground_y - height, lo_xz[1] - wall_distance])
    bhi = np.array([hi_xz[0] + wall_distance, ground_y + 1.0, hi_xz[1] + wall_distance])
    return Scene(boxes, Box(blo, bhi, np.ones(3)), ground_y=ground_y, seed=seed,
                 texture_frequency=texture_frequency, contrast=contrast, feature_size=feature_size)


def render_frame(scene: Scene, camera_world_pose: SE3Pose, k: Intrinsics, timestamp=0.0,
                 check_coverage=True) -> RenderedFrame:
    """Ray-cast one pinhole image; depth is the exact camera-frame z."""
    origin = camera_world_pose.translation
    scene.check_camera(origin)
    dirs = pixel_rays(k).reshape(-1, 3) @ camera_world_pose.rotation.T
    t, sid, _ = scene.intersect(origin, dirs)
    hit = np.isfinite(t)
    if check_coverage and hit.mean() < MIN_COVERAGE:
        raise InvalidPoseError(f"only {hit.mean():.0%} of the view hits textured geometry")
    pts = origin + dirs * np.where(hit, t, 1.0)[:, None]
    img = scene.tints(sid) * (0.25 + 0.75 * scene.texture(pts)[:, None])
    img = np.where(hit[:, None], img, 0.0)
    depth = np.where(hit, t, np.nan)
    return RenderedFrame(img.reshape(k.height, k.width, 3), depth.reshape(k.height, k.width), k, timestamp)


# ---------------------------------------------------------------- trajectories

@dataclass
class Trajectory:
    """Vehicle poses (vehicle-to-world) sampled at ``rate_hz``.

    ``speeds[k]`` is the speed between samples k and k+1.
    """

    poses: list
    speeds: np.ndarray
    rate_hz: float = 10.0

    @property
    def dt(self):
        return 1.0 / self.rate_hz

    def __len__(self):
        return len(self.poses)

    @property
    def positions(self):
        return np.stack([p.translation for p in self.poses])

    def to_dict(self):
        return {"rate_hz": self.rate_hz, "speeds": self.speeds.tolist(),
                "poses": [p.matrix().tolist() for p in self.poses]}

    @classmethod
    def from_dict(cls, d):
        return cls([SE3Pose.from_matrix(np.array(m)) for m in d["poses"]], np.array(d["speeds"], dtype=float),
                   float(d["rate_hz"]))


def make_trajectory(segments, speed=8.0, rate_hz=10.0, mount_pitch=0.0, start_heading=0.0) -> Trajectory:
    """Integrate ``segments`` of ``(n_steps, turn_per_step_rad)``.

    ``speed`` is a scalar or one value per step. Chords between samples have
    length ``speed * dt`` exactly. ``mount_pitch`` tilts the vehicle frame
    (the reference camera) about its x axis relative to the driving plane.
    """
    turns = np.concatenate([np.full(n, w, dtype=float) for n, w in segments])
    n_steps = len(turns)
    speeds = np.broadcast_to(np.asarray(speed, dtype=float), (n_steps,)).copy()
    dt = 1.0 / rate_hz
    heading = start_heading
    pos = np.zeros(3)
    mount = rot_x(mount_pitch)
    poses = [SE3Pose(rot_y(heading) @ mount, pos)]
    for k in range(n_steps):
        mid = heading + 0.5 * turns[k]
        pos = pos + speeds[k] * dt * np.array([math.sin(mid), 0.0, math.cos(mid)])
        heading += turns[k]
        poses.append(SE3Pose(rot_y(heading) @ mount, pos))
    return Trajectory(poses, speeds, rate_hz)


def two_turn_trajectory(n_frames=50, speed=8.0, rate_hz=10.0, turn_deg=80.0, turn_frames=10):
    """Straight / left turn / straight / right turn / straight."""
    steps = n_frames - 1
    if steps < 5:
        raise InvalidArgumentError("a two-turn trajectory needs at least six frames")
    turn_frames = min(turn_frames, steps // 4)
    rest = steps - 2 * turn_frames
    a, b = rest // 3, rest // 3
    c = rest - a - b
    w = math.radians(turn_deg) / turn_frames
    return make_trajectory([(a, 0.0), (turn_frames, -w), (b, 0.0), (turn_frames, w), (c, 0.0)], speed, rate_hz)


def straight_trajectory(n_frames=50, speed=8.0, rate_hz=10.0, mount_pitch=0.03):
    return make_trajectory([(n_frames - 1, 0.0)], speed, rate_hz, mount_pitch=mount_pitch)


# ---------------------------------------------------------------- rig layouts

def _yawed(yaw_deg, pitch_deg=0.0, roll_deg=0.0):
    r = rot_y(math.radians(yaw_deg)) @ rot_x(math.radians(pitch_deg)) @ rot_z(math.radians(roll_deg))
    return rotation_to_euler(r)


def ddad_like_rig(compact=True) -> RigConfig:
    """Six cameras: front, front-left, front-right, back-left, back-right, back.

    Adjacent cameras are 60 degrees apart; with a 75 degree field of view
    each adjacent pair shares about 20% of the view.
    """
    s = 1.0 if compact else 2.0
    spec = [
        ("front", (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
        ("front_left", (-60.0, -1.5, 1.0), (-0.45 * s, 0.02, -0.35 * s)),
        ("front_right", (60.0, 1.0, -0.8), (0.46 * s, 0.03, -0.33 * s)),
        ("back_left", (-120.0, 1.2, 0.7), (-0.5 * s, 0.05, -1.3 * s)),
        ("back_right", (121.0, -0.8, -1.1), (0.5 * s, 0.04, -1.32 * s)),
        ("back", (180.0, 2.0, 1.5), (0.02, 0.1, -1.6 * s)),
    ]
    base = np.array([(*_yawed(*ang), *pos) for _, ang, pos in spec])
    base[0] = 0.0
    return RigConfig(6, base, names=[n for n, _, _ in spec],
                     back_facing=[False, False, False, False, False, True],
                     spatial_pairs=[(0, 1), (0, 2), (1, 3), (2, 4), (3, 5), (4, 5)])


def straight_line_rig(mount_pitch=0.03) -> RigConfig:
    """DDAD-like rig whose back camera looks exactly against the driving direction
    of :func:`straight_trajectory` with the same ``mount_pitch``."""
    rig = ddad_like_rig()
    rig.base[5, :3] = (math.pi - mount_pitch, 0.0, math.pi)
    return rig


def stereo_rig(baseline=0.54) -> RigConfig:
    base = np.zeros((2, 6))
    base[1] = (0.003, -0.004, 0.002, baseline, 0.0, 0.0)
    return RigConfig(2, base, names=["left", "right"], back_facing=[False, False], spatial_pairs=[(0, 1)])


def monocular_rig() -> RigConfig:
    return RigConfig(1, names=["front"])


RIG_LAYOUTS = {"ddad": ddad_like_rig, "straight": straight_line_rig, "stereo": stereo_rig, "mono": monocular_rig}


# ---------------------------------------------------------------- sequences and observations

def camera_world_pose(vehicle_pose: SE3Pose, extrinsics: SE3Pose) -> SE3Pose:
    return vehicle_pose @ extrinsics


def generate_sequence(scene: Scene, trajectory: Trajectory, rig_truth: RigConfig, intrinsics,
                      sequence=0) -> SequenceData:
    """Render every camera at every trajectory sample."""
    if len(trajectory) < 3:
        raise InvalidArgumentError("a sequence needs at least three frames")
    n = rig_truth.n_cameras
    intrinsics = list(intrinsics) if isinstance(intrinsics, (list, tuple)) else [intrinsics] * n
    if len(intrinsics) != n:
        raise InvalidArgumentError("one Intrinsics per camera expected")
    h, w = intrinsics[0].shape
    images = np.zeros((len(trajectory), n, h, w, 3))
    depths = np.zeros((len(trajectory), n, h, w))
    ext = [rig_truth.extrinsics(i, sequence) for i in range(n)]
    for t, vp in enumerate(trajectory.poses):
        for i in range(n):
            f = render_frame(scene, camera_world_pose(vp, ext[i]), intrinsics[i], t * trajectory.dt)
            images[t, i] = f.image
            depths[t, i] = f.depth
    return SequenceData(images, depths, intrinsics, trajectory.dt)


@dataclass
class NoiseModel:
    rotation_std: float = 0.0
    direction_std: float = 0.0
    scale_bias: float = 1.0
    scale_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.rotation_std, self.direction_std, self.scale_std) < 0:
            raise InvalidArgumentError("noise standard deviations must be >= 0")

    def to_dict(self):
        return asdict(self)


def frame_pairs(n_frames):
    """All (t, tau) with tau = t - 1 or t + 1, in frame order."""
    out = []
    for t in range(n_frames):
        if t > 0:
            out.append((t, t - 1))
        if t < n_frames - 1:
            out.append((t, t + 1))
    return out


def true_camera_motion(trajectory: Trajectory, x: SE3Pose, t, tau) -> SE3Pose:
    """Camera motion mapping camera coordinates at ``t`` to those at ``tau``."""
    a = camera_world_pose(trajectory.poses[t], x)
    b = camera_world_pose(trajectory.poses[tau], x)
    return b.inverse() @ a


def observe_egomotion(trajectory: Trajectory, rig_truth: RigConfig, noise: NoiseModel = NoiseModel(),
                      sequence=0, normalize=True) -> ObservationSet:
    """Simulated pose-network output for every camera and adjacent frame pair.

    Exact motions are perturbed by ``noise`` (left-multiplied random rotation,
    rotated translation direction, scale factor). With ``normalize`` the
    translations are rescaled to each camera's true speed times dt and groups
    with a stopped camera are dropped.
    """
    rng = np.random.default_rng(noise.seed)
    n = rig_truth.n_cameras
    dt = trajectory.dt
    ext = [rig_truth.extrinsics(i, sequence) for i in range(n)]
    keys, rots, trans, speeds = [], [], [], []
    for t, tau in frame_pairs(len(trajectory)):
        r_g = np.zeros((n, 3, 3))
        t_g = np.zeros((n, 3))
        s_g = np.zeros(n)
        ok = True
        for i in range(n):
            m = true_camera_motion(trajectory, ext[i], t, tau)
            speed = float(np.linalg.norm(m.translation)) / dt
            r = so3_exp(rng.normal(size=3) * noise.rotation_std) @ m.rotation
            tr = so3_exp(rng.normal(size=3) * noise.direction_std) @ m.translation
            tr = tr * (noise.scale_bias + noise.scale_std * rng.normal())
            pose = SE3Pose(r, tr)
            if normalize:
                try:
                    pose = scale_translation(pose, speed, dt)
                except DegenerateTranslationError:
                    ok = False
            r_g[i], t_g[i], s_g[i] = pose.rotation, pose.translation, speed
        if not ok:
            log.warning("dropping frame pair (%d, %d): camera is not moving", t, tau)
            continue
        keys.append((sequence, t, tau))
        rots.append(r_g)
        trans.append(t_g)
        speeds.append(s_g)
    if not keys:
        return ObservationSet([], np.zeros((0, n, 3, 3)), np.zeros((0, n, 3)), np.zeros((0, n)))
    return ObservationSet(keys, np.stack(rots), np.stack(trans), np.stack(speeds))


def normalize_observations(obs: ObservationSet, dt) -> ObservationSet:
    """Apply velocity scale normalisation, dropping groups that cannot be scaled."""
    keep = []
    out = obs.copy()
    for r in range(len(obs)):
        try:
            for i in np.flatnonzero(obs.present[r]):
                p = scale_translation(SE3Pose(obs.rotations[r, i], obs.translations[r, i]), obs.speeds[r, i], dt)
                out.translations[r, i] = p.translation
            keep.append(r)
        except DegenerateTranslationError:
            log.warning("dropping group %s: degenerate translation", obs.keys[r])
    return out.subset(keep)


def default_intrinsics(width=160, height=96, hfov_deg=75.0) -> Intrinsics:
    return Intrinsics.from_fov(width, height, hfov_deg)


def euler_rig_rotation(rig: RigConfig, camera):
    p = rig.effective_params(camera)
    return euler_to_rotation(*p[:3])
