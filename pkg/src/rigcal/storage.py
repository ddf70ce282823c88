"""On-disk formats: PFM frames, JSON manifests and observation files.

Sequence directory layout::

    manifest.json          intrinsics, trajectory, rig truth, scene and seeds
    observations.json      raw ego-motion observations
    cam_<i>/image_<t>.pfm  colour frame (float32)
    cam_<i>/depth_<t>.pfm  z-depth in metres (float32, NaN where invalid)
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .camera import Intrinsics
from .data import ObservationSet, SequenceData
from .errors import InvalidArgumentError
from .rig import RigConfig

MANIFEST_VERSION = 1


def write_pfm(path, array):
    """Write a (H, W) or (H, W, 3) float image; rows are stored bottom-up."""
    a = np.asarray(array, dtype="<f4")
    if a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    elif a.ndim == 2:
        tag = b"Pf"
    else:
        raise InvalidArgumentError(f"PFM supports (H, W) or (H, W, 3), got {a.shape}")
    h, w = a.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        f.write(np.ascontiguousarray(a[::-1]).tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        data = f.read()
    m = re.match(rb"(PF|Pf)\s+(\d+)\s+(\d+)\s+(-?[\d.eE+-]+)\s", data)
    if m is None:
        raise InvalidArgumentError(f"{path} is not a PFM file")
    tag, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    channels = 3 if tag == b"PF" else 1
    a = np.frombuffer(data, dtype=dtype, offset=m.end(), count=w * h * channels)
    a = a.reshape((h, w, 3) if channels == 3 else (h, w))[::-1]
    return a.astype(float)


def observations_to_dict(obs: ObservationSet):
    return {"keys": [list(k) for k in obs.keys], "rotations": obs.rotations.tolist(),
            "translations": obs.translations.tolist(), "speeds": obs.speeds.tolist(),
            "present": obs.present.tolist()}


def observations_from_dict(d):
    n = len(d["keys"])
    return ObservationSet([tuple(k) for k in d["keys"]], np.array(d["rotations"], dtype=float).reshape(n, -1, 3, 3),
                          np.array(d["translations"], dtype=float).reshape(n, -1, 3),
                          np.array(d["speeds"], dtype=float).reshape(n, -1),
                          np.array(d["present"], dtype=bool).reshape(n, -1))


def _dump(path, payload):
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def write_sequence(directory, sequence: SequenceData, observations: ObservationSet, rig_truth: RigConfig,
                   trajectory, scene=None, config=None):
    """Write a rendered sequence; returns the manifest path."""
    root = Path(directory)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for i in range(sequence.n_cameras):
            cam = root / f"cam_{i}"
            cam.mkdir(exist_ok=True)
            for t in range(sequence.n_frames):
                write_pfm(cam / f"image_{t:06d}.pfm", sequence.images[t, i])
                write_pfm(cam / f"depth_{t:06d}.pfm", sequence.depths[t, i])
        manifest = {
            "schema_version": MANIFEST_VERSION,
            "n_frames": sequence.n_frames,
            "dt": sequence.dt,
            "cameras": [{"name": rig_truth.names[i], "dir": f"cam_{i}", "intrinsics": k.to_dict()}
                        for i, k in enumerate(sequence.intrinsics)],
            "trajectory": trajectory.to_dict(),
            "rig_truth": rig_truth.to_dict(),
            "scene": None if scene is None else scene.to_dict(),
            "config": config,
        }
        _dump(root / "manifest.json", manifest)
        _dump(root / "observations.json", observations_to_dict(observations))
    except OSError as exc:
        raise OSError(f"cannot write sequence to {root}: {exc}") from exc
    return root / "manifest.json"


def read_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path} is not valid JSON: {exc}") from exc
    if manifest.get("schema_version") != MANIFEST_VERSION:
        raise InvalidArgumentError(f"{path}: unsupported manifest schema_version {manifest.get('schema_version')}")
    return manifest


def read_sequence(directory):
    """Returns ``(sequence, observations, rig_truth, manifest)``."""
    root = Path(directory)
    manifest = read_manifest(root)
    cams = manifest["cameras"]
    ks = [Intrinsics.from_dict(c["intrinsics"]) for c in cams]
    n_t = int(manifest["n_frames"])
    h, w = ks[0].shape
    images = np.zeros((n_t, len(cams), h, w, 3))
    depths = np.zeros((n_t, len(cams), h, w))
    try:
        for i, c in enumerate(cams):
            for t in range(n_t):
                images[t, i] = read_pfm(root / c["dir"] / f"image_{t:06d}.pfm")
                depths[t, i] = read_pfm(root / c["dir"] / f"depth_{t:06d}.pfm")
        obs = observations_from_dict(json.loads((root / "observations.json").read_text()))
    except OSError as exc:
        raise OSError(f"cannot read sequence {root}: {exc}") from exc
    seq = SequenceData(images, depths, ks, float(manifest["dt"]))
    return seq, obs, RigConfig.from_dict(manifest["rig_truth"]), manifest
