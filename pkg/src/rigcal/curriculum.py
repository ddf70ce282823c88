"""Four-stage calibration schedule and the stage runner.

Stage rows (what is optimised, which losses are active):

=====================  =====  ==========  ==========  =====  ====
stage                  depth  ego-motion  extrinsics  photo  pose
=====================  =====  ==========  ==========  =====  ====
MonodepthPretraining   yes    yes         -           yes    yes
RotationEstimation     -      fixed       rotations   -      yes
ExtrinsicEstimation    fixed  yes         yes         yes    yes
EndToEnd               yes    yes         yes         yes    yes
=====================  =====  ==========  ==========  =====  ====

Depth and ego-motion come from the simulator instead of networks, so the
first stage reduces to velocity scale normalisation of the observations;
"depth" is a per-camera log-scale on the oracle depth maps and "ego-motion"
a per-group SE(3) correction of the observed camera motions.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import InvalidArgumentError, NonFiniteGradientError, StageDivergedError
from .evaluation import CalibrationError, calibration_error
from .gradients import CalibrationObjective, ParamLayout
from .losses import PoseConsistencyWeights
from .optim import AdamState, adam_step, sgd_step
from .rig import RigConfig
from .simulator import normalize_observations
from .warp import PhotometricWeights

log = logging.getLogger(__name__)

STAGE_NAMES = ("MonodepthPretraining", "RotationEstimation", "ExtrinsicEstimation", "EndToEnd")
CLI_STAGE_NAMES = {
    "monodepth-pretraining": "MonodepthPretraining",
    "rotation-estimation": "RotationEstimation",
    "extrinsic-estimation": "ExtrinsicEstimation",
    "end-to-end": "EndToEnd",
}
DIVERGENCE_FACTOR = 10.0
DIVERGENCE_FLOOR = 1e-8
CHECKPOINT_VERSION = 1


def stage_name(name):
    """Accept either the canonical stage name or its command-line spelling."""
    if name in STAGE_NAMES:
        return name
    if name in CLI_STAGE_NAMES:
        return CLI_STAGE_NAMES[name]
    raise InvalidArgumentError(f"unknown stage {name!r}; expected one of {sorted(CLI_STAGE_NAMES)}")


@dataclass(frozen=True)
class CurriculumStage:
    name: str
    live: frozenset
    losses: frozenset
    optimizer: str = "none"
    lr_extrinsics: float = 0.0
    lr_ego: float = 0.0
    lr_depth: float = 0.0
    epochs: int = 0
    batch_size: int = 3
    smoothness: bool = False

    def __post_init__(self):
        stage_name(self.name)
        if self.optimizer not in ("none", "sgd", "adam"):
            raise InvalidArgumentError(f"unknown optimizer {self.optimizer!r}")
        if not set(self.live) <= {"depth", "ego", "rotation", "translation"}:
            raise InvalidArgumentError(f"unknown live parameter groups {sorted(self.live)}")
        if not set(self.losses) <= {"photometric", "pose"}:
            raise InvalidArgumentError(f"unknown losses {sorted(self.losses)}")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidArgumentError("epochs must be >= 0 and batch_size >= 1")
        if min(self.lr_extrinsics, self.lr_ego, self.lr_depth) < 0:
            raise InvalidArgumentError("learning rates must be >= 0")

    def with_overrides(self, **kw):
        unknown = set(kw) - {"optimizer", "lr_extrinsics", "lr_ego", "lr_depth", "epochs", "batch_size", "smoothness"}
        if unknown:
            raise InvalidArgumentError(f"unknown stage overrides {sorted(unknown)}")
        return replace(self, **kw)


def default_stages():
    return [
        CurriculumStage("MonodepthPretraining", frozenset({"depth", "ego"}), frozenset({"photometric", "pose"})),
        CurriculumStage("RotationEstimation", frozenset({"rotation"}), frozenset({"pose"}),
                        "sgd", lr_extrinsics=0.1, epochs=10),
        CurriculumStage("ExtrinsicEstimation", frozenset({"ego", "rotation", "translation"}),
                        frozenset({"photometric", "pose"}), "adam", lr_extrinsics=1e-3, lr_ego=2e-4, epochs=10),
        CurriculumStage("EndToEnd", frozenset({"depth", "ego", "rotation", "translation"}),
                        frozenset({"photometric", "pose"}), "adam", lr_extrinsics=1e-4, lr_ego=1e-5,
                        lr_depth=1e-5, epochs=5, smoothness=True),
    ]


@dataclass
class StageReport:
    stage: str
    epoch_losses: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    start_loss: float = float("nan")
    error: CalibrationError = None
    seconds: float = 0.0

    @property
    def translation_error(self):
        return None if self.error is None else self.error.avg_translation

    @property
    def rotation_error(self):
        return None if self.error is None else self.error.avg_rotation

    def to_dict(self):
        return {"stage": self.stage, "epoch_losses": self.epoch_losses, "start_loss": self.start_loss,
                "seconds": self.seconds, "error": None if self.error is None else self.error.to_dict()}


@dataclass
class CalibrationState:
    """Everything the stages read and write."""

    rig: RigConfig
    dataset: Dataset
    ego: np.ndarray = None
    depth_log_scale: np.ndarray = None
    truth: RigConfig = None
    seed: int = 0
    optimizer: dict = None
    stage: str = None
    pose_weights: PoseConsistencyWeights = PoseConsistencyWeights()
    photo_weights: PhotometricWeights = PhotometricWeights()

    def __post_init__(self):
        self._fit_ego()
        if self.depth_log_scale is None:
            self.depth_log_scale = np.zeros(self.rig.n_cameras)

    def _fit_ego(self):
        shape = (len(self.dataset.observations), self.rig.n_cameras, 6)
        if self.ego is None or self.ego.shape != shape:
            self.ego = np.zeros(shape)

    def layout(self):
        return ParamLayout(self.rig.n_cameras, self.rig.n_sequences, len(self.dataset.observations),
                           self.rig.reference_camera)

    def flat(self):
        return self.layout().pack(self.rig.base, self.rig.residuals, self.ego, self.depth_log_scale)

    def load_flat(self, flat):
        base, residual, ego, depth = self.layout().unpack(flat)
        self.rig.base[:] = base
        self.rig.residuals[:] = residual
        self.ego[:] = ego
        self.depth_log_scale[:] = depth

    def error(self):
        return None if self.truth is None else calibration_error(self.rig, self.truth)

    def checkpoint(self):
        return {
            "schema_version": CHECKPOINT_VERSION,
            "stage": self.stage,
            "seed": self.seed,
            "rig": self.rig.to_dict(),
            "depth_log_scale": self.depth_log_scale.tolist(),
            "ego_correction": self.ego.tolist(),
            "optimizer": self.optimizer,
        }


def save_checkpoint(state: CalibrationState, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(state.checkpoint(), indent=1))
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path):
    """Returns ``(rig, payload)``."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path} is not valid JSON: {exc}") from exc
    if "rig" not in payload:
        raise InvalidArgumentError(f"{path} has no rig entry")
    return RigConfig.from_dict(payload["rig"]), payload


def _learning_rates(stage: CurriculumStage, layout: ParamLayout):
    lr = np.zeros(layout.size)
    base, residual, ego, depth = layout.unpack(lr)
    base[:] = stage.lr_extrinsics
    residual[:] = stage.lr_extrinsics
    ego[:] = stage.lr_ego
    depth[:] = stage.lr_depth
    return lr


def stage_mask(stage: CurriculumStage, layout: ParamLayout):
    return layout.mask(stage.live, learn_residuals=layout.n_sequences > 1)


def run_stage(stage: CurriculumStage, state: CalibrationState, checkpoint_dir=None, on_epoch=None):
    """Run one stage in place. Returns ``(state, StageReport)``.

    ``on_epoch(stage_name, epoch, loss, state)`` is called after every epoch.
    """
    t0 = time.perf_counter()
    report = StageReport(stage.name)
    if stage.name == "MonodepthPretraining":
        # velocity supervision of the simulated pose network output
        obs = state.dataset.observations
        dt = state.dataset.sequences[0].dt if state.dataset.sequences else state.dataset.meta.get("dt", 0.1)
        state.dataset.observations = normalize_observations(obs, dt)
        state._fit_ego()
    elif stage.epochs > 0 and stage.optimizer != "none":
        _optimise(stage, state, report, on_epoch)
    state.stage = stage.name
    report.error = state.error()
    report.seconds = time.perf_counter() - t0
    if report.error is not None:
        log.info("%s: t %.3f m  R %.3f deg  (%.1f s)", stage.name, report.error.avg_translation,
                 report.error.avg_rotation, report.seconds)
    if checkpoint_dir is not None:
        save_checkpoint(state, Path(checkpoint_dir) / f"checkpoint_{stage.name}.json")
    return state, report


def _optimise(stage, state, report, on_epoch=None):
    layout = state.layout()
    n_groups = layout.n_groups
    if n_groups == 0:
        raise InvalidArgumentError("no ego-motion observations left to optimise against")
    objective = CalibrationObjective(state.dataset, layout, state.rig.spatial_pairs,
                                     state.pose_weights, state.photo_weights,
                                     use_pose="pose" in stage.losses,
                                     use_photometric="photometric" in stage.losses,
                                     use_smoothness=stage.smoothness)
    flat = state.flat()
    mask = stage_mask(stage, layout)
    lr = _learning_rates(stage, layout)
    adam = AdamState.zeros(layout.size) if stage.optimizer == "adam" else None
    rng = np.random.default_rng([state.seed, STAGE_NAMES.index(stage.name)])

    start, _ = objective.value_and_grad(flat, need_grad=False)
    report.start_loss = float(start)
    if not math.isfinite(start):
        raise StageDivergedError(stage.name, report.step_losses, "loss is non-finite at stage start")
    limit = DIVERGENCE_FACTOR * max(start, DIVERGENCE_FLOOR)

    for epoch in range(stage.epochs):
        order = rng.permutation(n_groups)
        losses = []
        for k in range(0, n_groups, stage.batch_size):
            rows = np.sort(order[k:k + stage.batch_size])
            loss, grad = objective.value_and_grad(flat, rows)
            if not math.isfinite(loss):
                report.step_losses.append(float(loss))
                raise StageDivergedError(stage.name, report.step_losses, f"non-finite loss in epoch {epoch}")
            try:
                if adam is not None:
                    adam_step(adam, flat, grad, lr, mask)
                else:
                    sgd_step(flat, grad, lr, mask)
            except NonFiniteGradientError as exc:
                raise StageDivergedError(stage.name, report.step_losses, f"non-finite gradient in epoch {epoch}") from exc
            losses.append(float(loss))
        report.step_losses.extend(losses)
        mean = float(np.mean(losses))
        report.epoch_losses.append(mean)
        state.load_flat(flat)
        log.debug("%s epoch %d: loss %.6g", stage.name, epoch, mean)
        if on_epoch is not None:
            on_epoch(stage.name, epoch, mean, state)
        if mean > limit:
            raise StageDivergedError(stage.name, report.step_losses,
                                     f"epoch loss {mean:.4g} exceeds {DIVERGENCE_FACTOR:g}x the stage-start loss")
    state.load_flat(flat)
    state.optimizer = {"kind": stage.optimizer, "adam": None if adam is None else adam.to_dict()}


@dataclass
class CurriculumReport:
    stages: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def __getitem__(self, name):
        for r in self.stages:
            if r.stage == name:
                return r
        raise KeyError(name)

    def to_dict(self):
        return {"stages": [r.to_dict() for r in self.stages], "skipped": self.skipped}


def run_stages(state: CalibrationState, stages=None, skip=(), checkpoint_dir=None, on_epoch=None):
    """Run ``stages`` in order; ``skip`` lists stage names to leave out.

    On a stage error the exception carries the report of completed stages in
    ``exc.report``.
    """
    stages = default_stages() if stages is None else stages
    skip = {stage_name(s) for s in skip}
    report = CurriculumReport(skipped=sorted(skip))
    for stage in stages:
        if stage.name in skip:
            continue
        try:
            state, r = run_stage(stage, state, checkpoint_dir, on_epoch)
        except StageDivergedError as exc:
            exc.report = report
            raise
        report.stages.append(r)
    if checkpoint_dir is not None:
        save_checkpoint(state, Path(checkpoint_dir) / "checkpoint.json")
    return state, report


def run_curriculum(config, checkpoint_dir=None, on_epoch=None):
    """Build the synthetic problem described by ``config`` and calibrate it.

    Returns ``(rig, report, state)``.
    """
    from .experiment import build_problem

    state = build_problem(config)
    stages = config.stages()
    state, report = run_stages(state, stages, config.skip_stages, checkpoint_dir, on_epoch)
    return state.rig, report, state
