"""
Command-line surface: python -m app.cli <command> [options]

Exit codes: 0 success, 1 user error (bad flags, files or configuration), 2 internal failure.
"""
import argparse
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from app.analysis.correspondence import ground_truth_flow
from app.analysis.mapping import build_map, colorize_map
from app.analysis.projection import render_lidar_image
from app.analysis.synthetic import street_camera_pose, street_intrinsics, street_scene
from app.core.benchmark_manager import run_benchmark
from app.core.data_manager import format_record, write_report
from app.core.errors import ConfigError, IoFailure, UserInputError
from app.core.pipeline import (
    calibrate_frames, camera_axes, derive_seed, load_map, load_scene, localize_seed, sample_initial_pose,
    summarize_records,
)
from app.drivers import binary_codec, kitti, ply
from app.models.schemas import RunConfig, VoxelGridConfig

logger = logging.getLogger("app.cli")


class _Parser(argparse.ArgumentParser):
    """Usage errors are user errors: exit 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _require_file(path: Optional[str], flag: str) -> str:
    if not path:
        raise ConfigError(f"{flag} is required")
    if not os.path.isfile(path):
        raise IoFailure(f"{flag}: file not found: {path}")
    return path


def _load_run_config(args) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        _require_file(args.config, "--config")
        try:
            with open(args.config, "r") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"--config: {args.config} is not valid JSON ({e})") from e
    for flag, key in (("map", "map_path"), ("intrinsics", "intrinsics_path"),
                      ("trajectory", "trajectory_path"), ("output", "output_path"), ("frame", "frame")):
        value = getattr(args, flag, None)
        if value is not None:
            data[key] = value
    if getattr(args, "seeds", None) is not None:
        data["seeds"] = args.seeds
    run = RunConfig.model_validate(data)
    for flag, path in (("--map", run.map_path), ("--intrinsics", run.intrinsics_path),
                       ("--trajectory", run.trajectory_path)):
        if path is not None:
            _require_file(path, flag)
    return run


def _emit(lines: List[str], output: Optional[str]):
    text = "".join(line + "\n" for line in lines)
    if output:
        os.makedirs(os.path.dirname(os.path.abspath(output)), exist_ok=True)
        with open(output, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def cmd_build_map(args) -> int:
    trajectory = kitti.load_trajectory(_require_file(args.trajectory, "--trajectory"))
    if len(args.scans) > len(trajectory):
        raise ConfigError(f"{len(args.scans)} scans but only {len(trajectory)} trajectory poses")
    scans = [(kitti.load_scan(_require_file(p, "--scans")), pose)
             for p, pose in zip(args.scans, trajectory.poses)]
    labels = None
    if args.labels:
        if len(args.labels) != len(args.scans):
            raise ConfigError(f"--labels: {len(args.labels)} files for {len(args.scans)} scans")
        labels = [kitti.load_labels(_require_file(p, "--labels")) for p in args.labels]
    cloud = build_map(scans, VoxelGridConfig(voxel_size=args.voxel_size), labels, args.dynamic_labels or ())
    if args.output.lower().endswith(".ply"):
        ply.export_ply(cloud, args.output)
    else:
        kitti.save_scan(cloud, args.output)
    logger.info(f"[CLI] map with {len(cloud)} points written to {args.output}")
    return 0


def cmd_project(args) -> int:
    run = _load_run_config(args)
    scene = load_scene(run)
    image = render_lidar_image(scene.cloud, scene.gt_pose, scene.K, run.projection)
    binary_codec.save_lidar_image(image, args.output_image)
    logger.info(f"[CLI] {image.valid_count} valid pixels written to {args.output_image}")
    return 0


def cmd_gen_flow(args) -> int:
    run = _load_run_config(args)
    scene = load_scene(run)
    seed = run.seeds[0]
    init = sample_initial_pose(scene.gt_pose, run.initial_range, derive_seed(seed, 0))
    image, flow = ground_truth_flow(scene.cloud, init, scene.gt_pose, scene.K, run.projection)
    binary_codec.save_flow(flow, args.output_flow)
    if args.output_image:
        binary_codec.save_lidar_image(image, args.output_image)
    logger.info(f"[CLI] flow with {flow.valid_count} valid pixels written to {args.output_flow}")
    return 0


def cmd_localize(args) -> int:
    run = _load_run_config(args)
    scene = load_scene(run)
    records, log_err = localize_seed(scene, run, run.seeds[0])
    summary = summarize_records(records, [log_err])
    _emit([format_record(r.to_dict()) for r in records] + [format_record(summary)], run.output_path)
    return 0


def cmd_benchmark(args) -> int:
    run = _load_run_config(args)
    records, summary = run_benchmark(run)
    if run.output_path:
        write_report(run.output_path, records, summary)
    else:
        _emit([format_record(r.to_dict()) for r in records] + [format_record(summary)], None)
    logger.info(f"[CLI] {len(records)} records, final median E_t {summary['median_E_t']}")
    return 0


def cmd_calibrate(args) -> int:
    run = _load_run_config(args)
    if args.scans:
        frames = [kitti.load_scan(_require_file(p, "--scans")) for p in args.scans]
        K, frame_tag = kitti.load_intrinsics(_require_file(run.intrinsics_path, "--intrinsics"))
        extrinsic_file = kitti.load_trajectory(_require_file(args.extrinsic, "--extrinsic"))
        extrinsic = camera_axes(extrinsic_file.poses[0], frame_tag)
    else:
        frames = [street_scene(run.synthetic_points, seed=i).cloud for i in range(args.frames)]
        K, extrinsic = street_intrinsics(), street_camera_pose()

    result = calibrate_frames(frames, extrinsic, K, run.stages, run.seeds, run.projection, run.initial_noise)
    agg = result.aggregation
    report = {
        "runs": len(result.runs),
        "MSEE": result.msee,
        "MRR": result.mrr,
        "mean": {"rotation": agg.mean_pose.rotation.tolist(), "translation": agg.mean_pose.translation.tolist()},
        "mode": {"rotation": agg.mode_pose.rotation.tolist(), "translation": agg.mode_pose.translation.tolist()},
        "median_translation": np.asarray(agg.median_translation).tolist(),
        "failures": sum(1 for r in result.runs for o in r.outcomes if o.failure),
    }
    _emit([json.dumps(report, indent=2)], run.output_path)
    return 0


def cmd_colorize(args) -> int:
    cloud = load_map(_require_file(args.map, "--map"))
    K, frame_tag = kitti.load_intrinsics(_require_file(args.intrinsics, "--intrinsics"))
    trajectory = kitti.load_trajectory(_require_file(args.trajectory, "--trajectory"))
    if len(args.images) > len(trajectory):
        raise ConfigError(f"{len(args.images)} images but only {len(trajectory)} trajectory poses")
    images = []
    for path, pose in zip(args.images, trajectory.poses):
        images.append((kitti.load_image(_require_file(path, "--images")), camera_axes(pose.inverse(), frame_tag)))
    colored = colorize_map(cloud, images, K)
    ply.export_ply(colored, args.output, colored_only=args.colored_only)
    logger.info(f"[CLI] {int(colored.color_mask.sum())} of {len(colored)} points colored, written to {args.output}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="limatch", description="Camera/LiDAR geometric matching toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def scene_flags(p):
        p.add_argument("--config", help="RunConfig JSON document")
        p.add_argument("--map", help="map file (.bin scan format or .ply); synthetic street when omitted")
        p.add_argument("--intrinsics", help="intrinsics JSON")
        p.add_argument("--trajectory", help="camera trajectory (sensor -> map poses)")
        p.add_argument("--frame", type=int, help="trajectory index of the ground-truth pose")

    p = sub.add_parser("build-map", help="aggregate scans into a voxelized map")
    p.add_argument("--scans", nargs="+", required=True)
    p.add_argument("--trajectory", required=True, help="one sensor -> map pose per scan")
    p.add_argument("--labels", nargs="*", help="per-scan .label files")
    p.add_argument("--dynamic-labels", nargs="*", type=int, help="label ids to drop")
    p.add_argument("--voxel-size", type=float, default=VoxelGridConfig().voxel_size)
    p.add_argument("--output", required=True, help=".bin or .ply")
    p.set_defaults(func=cmd_build_map)

    p = sub.add_parser("project", help="render the map into a LiDAR-image (LIMG)")
    scene_flags(p)
    p.add_argument("--output-image", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("gen-flow", help="ground-truth flow from a sampled initial pose to the true pose")
    scene_flags(p)
    p.add_argument("--seeds", nargs=1, type=int, help="sampling seed")
    p.add_argument("--output-flow", required=True)
    p.add_argument("--output-image", help="also write the LiDAR-image rendered at the initial pose")
    p.set_defaults(func=cmd_gen_flow)

    p = sub.add_parser("localize", help="staged localization of one frame")
    scene_flags(p)
    p.add_argument("--seeds", nargs=1, type=int, help="initial-pose seed")
    p.add_argument("--output", help="report file (stdout when omitted)")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("benchmark", help="seed-swept Monte-Carlo localization report")
    scene_flags(p)
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--output", help="report file (stdout when omitted)")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("calibrate", help="multi-frame extrinsic calibration with temporal aggregation")
    p.add_argument("--config", help="RunConfig JSON document")
    p.add_argument("--scans", nargs="*", help="LiDAR frames; synthetic frames when omitted")
    p.add_argument("--intrinsics")
    p.add_argument("--extrinsic", help="ground-truth LiDAR -> camera pose (trajectory format, first line); "
                                       "robot axes when the intrinsics are robot-x-forward")
    p.add_argument("--frames", type=int, default=3, help="number of synthetic frames")
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--output")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("colorize", help="color the map from camera images and export PLY")
    p.add_argument("--map", required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--trajectory", required=True, help="one camera pose per image")
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--colored-only", action="store_true")
    p.set_defaults(func=cmd_colorize)
    return parser


def cli_dispatch(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UserInputError, ValidationError) as e:
        print(f"limatch {args.command}: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.exception(f"[CLI] internal failure in {args.command}: {e}")
        return 2


def main():
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
