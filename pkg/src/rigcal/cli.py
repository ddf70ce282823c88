"""Command-line entry points: simulate, calibrate, evaluate, export.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 stage
divergence, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .curriculum import CLI_STAGE_NAMES, CalibrationState, load_checkpoint, run_stages
from .data import Dataset
from .errors import InvalidArgumentError, StageDivergedError
from .evaluation import calibration_error, export_pointcloud, format_table, table_csv
from .experiment import ExperimentConfig, build_problem, initial_rig, simulate
from .rig import RigConfig
from .storage import read_manifest, read_sequence, write_sequence

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("rigcal")


def _load_config(args):
    if args.config is None:
        return ExperimentConfig()
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {args.config}: {exc}") from exc
    return ExperimentConfig.from_json(text)


def cmd_simulate(args):
    cfg = _load_config(args)
    if args.seed is not None:
        cfg.scene = replace(cfg.scene, seed=args.seed)
        cfg.noise = replace(cfg.noise, seed=args.seed)
    problem = simulate(cfg)
    path = write_sequence(args.out, problem.sequence, problem.observations, problem.truth,
                          problem.trajectory, problem.scene, cfg.to_dict())
    print(f"wrote {problem.sequence.n_frames} frames x {problem.sequence.n_cameras} cameras to {path.parent}")
    return EXIT_OK


def cmd_calibrate(args):
    cfg = _load_config(args)
    if args.seed is not None:
        cfg.seed = args.seed
    skip = list(cfg.skip_stages) + list(args.skip_stage or [])
    cfg = replace(cfg, skip_stages=skip)
    out = Path(args.out or cfg.output_dir)
    if args.data:
        seq, obs, truth, _ = read_sequence(args.data)
        dataset = Dataset([seq], obs, {"dt": seq.dt})
        state = CalibrationState(initial_rig(truth, cfg.rig.back_init), dataset, truth=truth, seed=cfg.seed)
    else:
        state = build_problem(cfg)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json() + "\n")
    except OSError as exc:
        raise OSError(f"cannot write to {out}: {exc}") from exc

    def progress(stage, epoch, loss, st):
        log.info("%s epoch %d  loss %.6f", stage, epoch, loss)

    state, report = run_stages(state, cfg.stages(), skip, out, progress)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    err = state.error()
    if err is not None:
        print(format_table(err, "Calibration error"))
        (out / "errors.csv").write_text(table_csv(err))
    print(f"checkpoint: {out / 'checkpoint.json'}")
    return EXIT_OK


def _truth_rig(path):
    path = Path(path)
    if path.is_dir() or path.name == "manifest.json":
        return RigConfig.from_dict(read_manifest(path)["rig_truth"])
    try:
        payload = json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path} is not valid JSON: {exc}") from exc
    if "rig_truth" in payload:
        return RigConfig.from_dict(payload["rig_truth"])
    if "rig" in payload:
        return RigConfig.from_dict(payload["rig"])
    raise InvalidArgumentError(f"{path} holds neither a manifest nor a checkpoint")


def cmd_evaluate(args):
    est, _ = load_checkpoint(args.checkpoint)
    truth = _truth_rig(args.truth)
    err = calibration_error(est, truth, args.sequence)
    print(format_table(err))
    if args.csv:
        try:
            Path(args.csv).write_text(table_csv(err))
        except OSError as exc:
            raise OSError(f"cannot write {args.csv}: {exc}") from exc
    return EXIT_OK


def cmd_export(args):
    rig, payload = load_checkpoint(args.checkpoint)
    seq, _, _, _ = read_sequence(args.data)
    if not 0 <= args.frame < seq.n_frames:
        raise InvalidArgumentError(f"frame {args.frame} outside 0..{seq.n_frames - 1}")
    scale = np.exp(np.array(payload.get("depth_log_scale", np.zeros(rig.n_cameras))))
    frames = [seq.frame(args.frame, i) for i in range(rig.n_cameras)]
    depth = [f.depth * s for f, s in zip(frames, scale)]
    pts, _ = export_pointcloud(frames, rig, depth, args.out, args.sequence)
    print(f"wrote {len(pts)} points to {args.out}")
    if args.poses:
        poses = {rig.names[i]: rig.extrinsics(i, args.sequence).matrix().tolist() for i in range(rig.n_cameras)}
        try:
            Path(args.poses).write_text(json.dumps(poses, indent=1) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write {args.poses}: {exc}") from exc
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log per-epoch progress")
    p = argparse.ArgumentParser(prog="rigcal", parents=[common],
                                description="Self-supervised multi-camera rig extrinsic calibration.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="render a synthetic sequence to disk")
    s.add_argument("--config", help="experiment config (JSON)")
    s.add_argument("--seed", type=int, help="scene and observation-noise seed")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", parents=[common], help="run the calibration curriculum")
    c.add_argument("--config", help="experiment config (JSON)")
    c.add_argument("--seed", type=int, help="curriculum seed (batch order)")
    c.add_argument("--skip-stage", action="append", choices=sorted(CLI_STAGE_NAMES), help="leave out a stage")
    c.add_argument("--data", help="sequence directory written by 'simulate' (default: simulate in memory)")
    c.add_argument("--out", help="output directory for checkpoints and reports")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evaluate", parents=[common], help="compare a checkpoint against the true rig")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--truth", required=True, help="sequence manifest (or directory) or a checkpoint")
    e.add_argument("--sequence", type=int, default=0)
    e.add_argument("--csv", help="also write the table as CSV")
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("export", parents=[common], help="write a coloured point cloud and camera poses")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--data", required=True, help="sequence directory")
    x.add_argument("--frame", type=int, default=0)
    x.add_argument("--sequence", type=int, default=0)
    x.add_argument("--out", required=True, help="PLY output path")
    x.add_argument("--poses", help="JSON file for the per-camera extrinsic matrices")
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except StageDivergedError as exc:
        print(f"error: stage {exc.stage} diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InvalidArgumentError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
