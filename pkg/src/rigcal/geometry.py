"""SO(3)/SE(3) helpers.

Euler angles follow one convention everywhere in the package:
``R(theta, phi, psi) = Rx(theta) @ Ry(phi) @ Rz(psi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

TWO_PI = 2.0 * math.pi
ORTHO_TOL = 1e-7


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _drot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def euler_to_rotation(theta, phi, psi):
    """Rotation matrix ``Rx(theta) Ry(phi) Rz(psi)``."""
    if not all(math.isfinite(float(a)) for a in (theta, phi, psi)):
        raise InvalidArgumentError(f"non-finite Euler angles {(theta, phi, psi)}")
    return rot_x(theta) @ rot_y(phi) @ rot_z(psi)


def euler_jacobian(theta, phi, psi):
    """Partial derivatives of :func:`euler_to_rotation`, shape (3, 3, 3).

    ``J[k]`` is dR/d(angle k).
    """
    rx, ry, rz = rot_x(theta), rot_y(phi), rot_z(psi)
    return np.stack([
        _drot_x(theta) @ ry @ rz,
        rx @ _drot_y(phi) @ rz,
        rx @ ry @ _drot_z(psi),
    ])


def rotation_to_euler(r):
    """Inverse of :func:`euler_to_rotation` with phi in [-pi/2, pi/2]."""
    r = np.asarray(r, dtype=float)
    phi = math.asin(max(-1.0, min(1.0, r[0, 2])))
    theta = math.atan2(-r[1, 2], r[2, 2])
    psi = math.atan2(-r[0, 1], r[0, 0])
    return theta, phi, psi


def wrap_angle(a):
    """Map an angle into (-2pi, 2pi), keeping its sign (unwrapped storage)."""
    return math.fmod(float(a), TWO_PI)


def angle_difference(a, b):
    """Signed difference a - b reduced to (-pi, pi]."""
    d = math.remainder(float(a) - float(b), TWO_PI)
    return math.pi if d == -math.pi else d


def is_rotation(r, tol=1e-9):
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return bool(np.max(np.abs(r.T @ r - np.eye(3))) <= tol and abs(np.linalg.det(r) - 1.0) <= tol)


def orthonormalize(r):
    """Gram-Schmidt re-orthonormalisation of the columns of ``r``."""
    r = np.asarray(r, dtype=float)
    c0 = r[:, 0] / np.linalg.norm(r[:, 0])
    c1 = r[:, 1] - c0 * (c0 @ r[:, 1])
    c1 /= np.linalg.norm(c1)
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=1)


def maybe_orthonormalize(r):
    if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL:
        return orthonormalize(r)
    return r


def vee(m):
    """Axial vector of the skew part of ``m`` (batched over leading axes)."""
    m = np.asarray(m)
    return 0.5 * np.stack([
        m[..., 2, 1] - m[..., 1, 2],
        m[..., 0, 2] - m[..., 2, 0],
        m[..., 1, 0] - m[..., 0, 1],
    ], axis=-1)


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w):
    """Rodrigues formula; ``w`` is an axis-angle vector."""
    w = np.asarray(w, dtype=float)
    angle = float(np.linalg.norm(w))
    if angle < 1e-12:
        return np.eye(3) + skew(w)
    k = skew(w / angle)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


@dataclass(frozen=True)
class SE3Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self):
        return se3_inverse(self)

    def apply(self, points):
        """Transform points of shape (..., 3)."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def __matmul__(self, other):
        return se3_compose(self, other)

    def allclose(self, other, atol=1e-9):
        return bool(np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
                    and np.allclose(self.translation, other.translation, atol=atol, rtol=0))


def se3_compose(a: SE3Pose, b: SE3Pose) -> SE3Pose:
    return SE3Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def se3_inverse(p: SE3Pose) -> SE3Pose:
    rt = p.rotation.T
    return SE3Pose(rt, -rt @ p.translation)


def transfer_pose(pose_i: SE3Pose, x_i: SE3Pose, x_j: SE3Pose) -> SE3Pose:
    """Express camera i's ego-motion in camera j's frame.

    Computes ``X_j^-1 X_i P X_i^-1 X_j`` where the extrinsics map camera
    coordinates into the shared vehicle frame.
    """
    rel = se3_compose(se3_inverse(x_j), x_i)
    return se3_compose(se3_compose(rel, pose_i), se3_inverse(rel))


def geodesic_angle(a, b):
    """Angle of the relative rotation ``a.T @ b`` in [0, pi].

    Batched over leading axes. Uses atan2 of the skew and trace parts, which
    equals ``arccos(clip((tr(a.T b) - 1) / 2, -1, 1))`` but keeps precision
    near 0 and pi.
    """
    e = np.swapaxes(np.asarray(a), -1, -2) @ np.asarray(b)
    s = np.linalg.norm(vee(e), axis=-1)
    c = 0.5 * (np.trace(e, axis1=-2, axis2=-1) - 1.0)
    out = np.arctan2(s, np.clip(c, -1.0, 1.0))
    return float(out) if out.ndim == 0 else out


def geodesic_angle_grad(a, b, eps=1e-15):
    """Gradients (dA, dB) of :func:`geodesic_angle` for batched rotations.

    At exactly zero (or pi) the skew part vanishes and the subgradient 0 is
    returned for the skew contribution.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    e = np.swapaxes(a, -1, -2) @ b
    w = vee(e)
    s = np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(e, axis1=-2, axis2=-1) - 1.0)
    nrm = np.hypot(s, c)
    s_, c_ = s / nrm, c / nrm
    safe = s > eps
    u = np.where(safe[..., None], w / np.where(safe, s, 1.0)[..., None], 0.0)
    # d angle = c ds - s dc, with ds = u . d(vee E), dc = tr(dE) / 2
    g = np.zeros(e.shape)
    cu = 0.5 * c_[..., None] * u
    g[..., 2, 1] += cu[..., 0]
    g[..., 1, 2] -= cu[..., 0]
    g[..., 0, 2] += cu[..., 1]
    g[..., 2, 0] -= cu[..., 1]
    g[..., 1, 0] += cu[..., 2]
    g[..., 0, 1] -= cu[..., 2]
    g -= 0.5 * s_[..., None, None] * np.eye(3)
    grad_b = a @ g
    grad_a = b @ np.swapaxes(g, -1, -2)
    return grad_a, grad_b


@dataclass
class EulerExtrinsics:
    """Six-parameter camera pose: Euler angles (rad) and translation (m)."""

    theta: float = 0.0
    phi: float = 0.0
    psi: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    tz: float = 0.0

    def __post_init__(self):
        self.theta = wrap_angle(self.theta)
        self.phi = wrap_angle(self.phi)
        self.psi = wrap_angle(self.psi)
        self.tx, self.ty, self.tz = float(self.tx), float(self.ty), float(self.tz)

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(*v.tolist())

    @classmethod
    def from_se3(cls, pose: SE3Pose):
        return cls(*rotation_to_euler(pose.rotation), *pose.translation.tolist())

    def as_vector(self):
        return np.array([self.theta, self.phi, self.psi, self.tx, self.ty, self.tz])

    @property
    def angles(self):
        return np.array([self.theta, self.phi, self.psi])

    def to_se3(self) -> SE3Pose:
        return SE3Pose(euler_to_rotation(self.theta, self.phi, self.psi), [self.tx, self.ty, self.tz])


def params_to_se3(v) -> SE3Pose:
    """SE3 pose of a raw 6-vector without the angle wrapping of EulerExtrinsics."""
    v = np.asarray(v, dtype=float)
    return SE3Pose(euler_to_rotation(v[0], v[1], v[2]), v[3:6])


def euler_to_rotation_batch(angles):
    """Vectorised :func:`euler_to_rotation` over ``angles`` of shape (..., 3)."""
    a = np.asarray(angles, dtype=float)
    c, s = np.cos(a), np.sin(a)
    cx, cy, cz = c[..., 0], c[..., 1], c[..., 2]
    sx, sy, sz = s[..., 0], s[..., 1], s[..., 2]
    r = np.empty(a.shape[:-1] + (3, 3))
    r[..., 0, 0] = cy * cz
    r[..., 0, 1] = -cy * sz
    r[..., 0, 2] = sy
    r[..., 1, 0] = cx * sz + sx * sy * cz
    r[..., 1, 1] = cx * cz - sx * sy * sz
    r[..., 1, 2] = -sx * cy
    r[..., 2, 0] = sx * sz - cx * sy * cz
    r[..., 2, 1] = sx * cz + cx * sy * sz
    r[..., 2, 2] = cx * cy
    return r


def euler_jacobian_batch(angles):
    """dR/d(angle) for ``angles`` of shape (..., 3); result (..., 3, 3, 3)."""
    a = np.asarray(angles, dtype=float)
    c, s = np.cos(a), np.sin(a)
    z = np.zeros(a.shape[:-1])
    o = np.ones(a.shape[:-1])

    def mats(rows):
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    cx, cy, cz = c[..., 0], c[..., 1], c[..., 2]
    sx, sy, sz = s[..., 0], s[..., 1], s[..., 2]
    rx = mats([[o, z, z], [z, cx, -sx], [z, sx, cx]])
    ry = mats([[cy, z, sy], [z, o, z], [-sy, z, cy]])
    rz = mats([[cz, -sz, z], [sz, cz, z], [z, z, o]])
    drx = mats([[z, z, z], [z, -sx, -cx], [z, cx, -sx]])
    dry = mats([[-sy, z, cy], [z, z, z], [-cy, z, -sy]])
    drz = mats([[-sz, -cz, z], [cz, -sz, z], [z, z, z]])
    return np.stack([drx @ ry @ rz, rx @ dry @ rz, rx @ ry @ drz], axis=-3)
