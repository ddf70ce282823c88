"""Pinhole camera model.

Pixel coordinates use the pixel-centre convention: integer ``(u, v)`` is the
centre of the pixel in column ``u``, row ``v``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgumentError

Z_MIN = 1e-3


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidArgumentError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width, height, hfov_deg):
        fx = 0.5 * width / np.tan(np.radians(hfov_deg) / 2.0)
        return cls(float(fx), float(fx), (width - 1) / 2.0, (height - 1) / 2.0, int(width), int(height))

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def hfov(self):
        """Horizontal field of view in radians."""
        return 2.0 * np.arctan(0.5 * self.width / self.fx)

    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


def pixel_grid(k: Intrinsics):
    """(u, v) coordinates of every pixel centre, each of shape (H, W)."""
    v, u = np.mgrid[0:k.height, 0:k.width].astype(float)
    return u, v


def pixel_rays(k: Intrinsics):
    """Rays with unit z-component through every pixel centre, shape (H, W, 3)."""
    u, v = pixel_grid(k)
    return np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)


def valid_depth(depth):
    depth = np.asarray(depth)
    return np.isfinite(depth) & (depth > 0)


def unproject(depth, k: Intrinsics):
    """Back-project a depth map to camera-frame points.

    Returns ``(points, valid)`` with points of shape (H, W, 3). Invalid depths
    (non-positive or non-finite) give NaN points and ``valid == False``.
    """
    depth = np.asarray(depth, dtype=float)
    if depth.shape != k.shape:
        raise InvalidArgumentError(f"depth shape {depth.shape} does not match intrinsics {k.shape}")
    valid = valid_depth(depth)
    d = np.where(valid, depth, np.nan)
    return pixel_rays(k) * d[..., None], valid


def project(points, k: Intrinsics, z_min=Z_MIN):
    """Project camera-frame points of shape (..., 3).

    Returns ``(uvz, valid)``; points with ``z <= z_min`` or non-finite
    coordinates are flagged invalid and get NaN pixel coordinates.
    """
    p = np.asarray(points, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    with np.errstate(invalid="ignore"):
        valid = np.isfinite(p).all(axis=-1) & (z > z_min)
    zs = np.where(valid, z, 1.0)
    u = np.where(valid, k.fx * x / zs + k.cx, np.nan)
    v = np.where(valid, k.fy * y / zs + k.cy, np.nan)
    return np.stack([u, v, np.where(valid, z, np.nan)], axis=-1), valid
