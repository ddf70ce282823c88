"""Calibration metrics, result tables and point-cloud export."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import unproject
from .errors import InvalidArgumentError
from .geometry import geodesic_angle


@dataclass
class CalibrationError:
    """Per-camera errors; averages skip the reference camera."""

    names: list
    translation: np.ndarray     # metres
    rotation: np.ndarray        # degrees
    reference_camera: int = 0

    @property
    def others(self):
        return [i for i in range(len(self.names)) if i != self.reference_camera]

    @property
    def avg_translation(self):
        idx = self.others
        return float(np.mean(self.translation[idx])) if idx else 0.0

    @property
    def avg_rotation(self):
        idx = self.others
        return float(np.mean(self.rotation[idx])) if idx else 0.0

    def to_dict(self):
        return {"names": list(self.names), "translation_m": self.translation.tolist(),
                "rotation_deg": self.rotation.tolist(), "reference_camera": self.reference_camera,
                "avg_translation_m": self.avg_translation, "avg_rotation_deg": self.avg_rotation}


def _relative_to_reference(rig, sequence):
    ref = rig.extrinsics(rig.reference_camera, sequence).inverse()
    return [ref @ rig.extrinsics(i, sequence) for i in range(rig.n_cameras)]


def calibration_error(estimated, truth, sequence=0) -> CalibrationError:
    """Translation (Euclidean, m) and rotation (geodesic, deg) error per camera."""
    if estimated.n_cameras != truth.n_cameras:
        raise InvalidArgumentError("rigs have different camera counts")
    if estimated.reference_camera != truth.reference_camera:
        raise InvalidArgumentError("rigs use different reference cameras")
    est = _relative_to_reference(estimated, sequence)
    ref = _relative_to_reference(truth, sequence)
    t_err = np.array([np.linalg.norm(a.translation - b.translation) for a, b in zip(est, ref)])
    r_err = np.array([math.degrees(geodesic_angle(a.rotation, b.rotation)) for a, b in zip(est, ref)])
    return CalibrationError(list(truth.names), t_err, r_err, truth.reference_camera)


def _rows(err: CalibrationError):
    idx = err.others
    header = ["Metric"] + [err.names[i] for i in idx] + ["Avg."]
    t_row = ["t [m]"] + [f"{err.translation[i]:.3f}" for i in idx] + [f"{err.avg_translation:.3f}"]
    r_row = ["R [deg]"] + [f"{err.rotation[i]:.3f}" for i in idx] + [f"{err.avg_rotation:.3f}"]
    return header, t_row, r_row


def format_table(err: CalibrationError, title=None):
    """Aligned text table: one column per non-reference camera plus the average."""
    rows = _rows(err)
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = [] if title is None else [title]
    for k, r in enumerate(rows):
        lines.append("  ".join(cell.rjust(w) if c else cell.ljust(w) for c, (cell, w) in enumerate(zip(r, widths))))
        if k == 0:
            lines.append("-" * len(lines[-1]))
    return "\n".join(lines)


def table_csv(err: CalibrationError):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(_rows(err))
    return buf.getvalue()


def pointcloud(frames, rig, depth=None, sequence=0):
    """Vehicle-frame points and colours from per-camera frames.

    ``frames`` is a list of :class:`RenderedFrame` (one per camera);
    ``depth`` optionally replaces their depth maps.
    """
    if len(frames) != rig.n_cameras:
        raise InvalidArgumentError("one frame per rig camera expected")
    pts, cols = [], []
    for i, f in enumerate(frames):
        d = f.depth if depth is None else depth[i]
        p, valid = unproject(d, f.intrinsics)
        x = rig.extrinsics(i, sequence)
        pts.append(x.apply(p[valid]))
        img = f.image if f.image.ndim == 3 else np.repeat(f.image[..., None], 3, axis=-1)
        cols.append(img[valid])
    return np.concatenate(pts), np.concatenate(cols)


def write_ply(path, points, colours):
    """ASCII PLY with 8-bit colour."""
    path = Path(path)
    rgb = np.clip(np.round(np.asarray(colours) * 255.0), 0, 255).astype(int)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(points)}",
             "property float x", "property float y", "property float z",
             "property uchar red", "property uchar green", "property uchar blue", "end_header"]
    lines += [f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}" for p, c in zip(points, rgb)]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write point cloud {path}: {exc}") from exc
    return path


def read_ply(path):
    """Read back a file written by :func:`write_ply`."""
    lines = Path(path).read_text().splitlines()
    start = lines.index("end_header") + 1
    data = np.array([[float(v) for v in ln.split()] for ln in lines[start:]]).reshape(-1, 6)
    return data[:, :3], data[:, 3:] / 255.0


def export_pointcloud(frames, rig, depth=None, path=None, sequence=0):
    """Merge all cameras into one coloured cloud; writes PLY when ``path`` is given."""
    pts, cols = pointcloud(frames, rig, depth, sequence)
    if path is not None:
        write_ply(path, pts, cols)
    return pts, cols


def plane_fit_residual(points):
    """RMS distance of points to their least-squares plane."""
    c = points - points.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    return float(s[-1] / math.sqrt(len(points)))
