"""Experiment configuration and assembly of synthetic calibration problems."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .curriculum import CalibrationState, default_stages, stage_name
from .data import Dataset, ObservationSet
from .errors import InvalidArgumentError
from .rig import RigConfig, init_extrinsics
from .simulator import (RIG_LAYOUTS, NoiseModel, default_intrinsics, generate_sequence, make_scene,
                        observe_egomotion, straight_trajectory, two_turn_trajectory)

SCHEMA_VERSION = 1

# Per-stage overrides used by default. The reference learning rates are tuned for
# network weights over many thousands of steps; a 50-frame sequence gives a few
# hundred steps per stage, so the extrinsic steps are larger and the per-group
# ego corrections (which have no shared weights to regularise them) move slower.
DESK_SCALE_OVERRIDES = {
    "ExtrinsicEstimation": {"lr_extrinsics": 1e-2, "lr_ego": 2e-5},
    "EndToEnd": {"lr_extrinsics": 1e-3},
}


class ConfigError(InvalidArgumentError):
    """Raised for malformed or inconsistent experiment configurations."""


def _from_dict(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class SceneSpec:
    seed: int = 1
    n_boxes: int = 40
    clearance: float = 4.0
    texture_frequency: float = 0.6
    contrast: float = 0.9


@dataclass
class TrajectorySpec:
    kind: str = "two_turn"          # "two_turn" or "straight"
    n_frames: int = 50
    speed: float = 8.0
    rate_hz: float = 10.0
    turn_deg: float = 80.0
    mount_pitch: float = 0.03       # straight scenario only

    def __post_init__(self):
        if self.kind not in ("two_turn", "straight"):
            raise ConfigError(f"unknown trajectory kind {self.kind!r}")
        if self.n_frames < 3:
            raise ConfigError("a trajectory needs at least three frames")
        if self.kind == "two_turn" and self.n_frames < 6:
            raise ConfigError("a two-turn trajectory needs at least six frames")

    def build(self):
        if self.kind == "straight":
            return straight_trajectory(self.n_frames, self.speed, self.rate_hz, self.mount_pitch)
        return two_turn_trajectory(self.n_frames, self.speed, self.rate_hz, self.turn_deg)


@dataclass
class RigSpec:
    layout: str = "ddad"            # see simulator.RIG_LAYOUTS
    width: int = 160
    height: int = 96
    hfov_deg: float = 75.0
    back_init: str = "flip"         # "flip": back cameras start at (pi, 0, pi); "zero": all start at 0

    def __post_init__(self):
        if self.layout not in RIG_LAYOUTS:
            raise ConfigError(f"unknown rig layout {self.layout!r}; expected one of {sorted(RIG_LAYOUTS)}")
        if self.back_init not in ("flip", "zero"):
            raise ConfigError("back_init must be 'flip' or 'zero'")

    def truth(self, mount_pitch=0.03):
        if self.layout == "straight":
            return RIG_LAYOUTS["straight"](mount_pitch)
        return RIG_LAYOUTS[self.layout]()


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one calibration run."""

    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    scene: SceneSpec = field(default_factory=SceneSpec)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    rig: RigSpec = field(default_factory=RigSpec)
    noise: NoiseModel = field(default_factory=NoiseModel)
    stages_override: dict = field(default_factory=lambda: copy.deepcopy(DESK_SCALE_OVERRIDES))
    skip_stages: list = field(default_factory=list)
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        for name in self.skip_stages:
            try:
                stage_name(name)
            except InvalidArgumentError as exc:
                raise ConfigError(str(exc)) from exc
        self.stages()

    def stages(self):
        out = []
        by_name = {}
        for k, v in self.stages_override.items():
            try:
                by_name[stage_name(k)] = v
            except InvalidArgumentError as exc:
                raise ConfigError(str(exc)) from exc
        for s in default_stages():
            try:
                out.append(s.with_overrides(**by_name.get(s.name, {})))
            except (InvalidArgumentError, TypeError) as exc:
                raise ConfigError(f"stages_override[{s.name}]: {exc}") from exc
        return out

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        sub = {"scene": SceneSpec, "trajectory": TrajectorySpec, "rig": RigSpec, "noise": NoiseModel}
        for key, kind in sub.items():
            if key in d:
                d[key] = _from_dict(kind, d[key], key)
        return _from_dict(cls, d, "config")

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")


@dataclass
class SimulatedProblem:
    """A rendered world plus its ground truth."""

    trajectory: object
    truth: RigConfig
    scene: object
    sequence: object
    observations: ObservationSet


def simulate(config: ExperimentConfig) -> SimulatedProblem:
    """Render the configured sequence and the raw (unnormalised) ego-motion observations."""
    traj = config.trajectory.build()
    truth = config.rig.truth(config.trajectory.mount_pitch)
    sc = config.scene
    scene = make_scene(traj.positions, seed=sc.seed, n_boxes=sc.n_boxes, clearance=sc.clearance,
                       texture_frequency=sc.texture_frequency, contrast=sc.contrast)
    k = default_intrinsics(config.rig.width, config.rig.height, config.rig.hfov_deg)
    seq = generate_sequence(scene, traj, truth, k)
    obs = observe_egomotion(traj, truth, config.noise, normalize=False)
    return SimulatedProblem(traj, truth, scene, seq, obs)


def initial_rig(truth: RigConfig, back_init="flip") -> RigConfig:
    rig = init_extrinsics(truth)
    if back_init == "zero":
        rig.base[:] = 0.0
    return rig


def build_problem(config: ExperimentConfig, problem: SimulatedProblem = None) -> CalibrationState:
    """Calibration state at the start of the curriculum."""
    problem = simulate(config) if problem is None else problem
    dataset = Dataset([problem.sequence], problem.observations.copy(), {"dt": problem.trajectory.dt})
    rig = initial_rig(problem.truth, config.rig.back_init)
    return CalibrationState(rig, dataset, truth=problem.truth, seed=config.seed)


def stage_errors(report):
    return {r.stage: (r.translation_error, r.rotation_error) for r in report.stages}

