"""
End-to-end drivers: initial-pose sampling, single refinement stages, the staged
localization chain, extrinsic calibration over frames and report summaries.
"""
import logging
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

import config
from app.analysis.calibration import aggregate_extrinsics, msee_mrr_from_errors
from app.analysis.correspondence import filter_by_uncertainty, make_matcher, to_correspondences
from app.analysis.geometry import (
    ROBOT_TO_CAMERA, CameraIntrinsics, PointCloud, PoseSE3, compose, pose_errors, se3_log_norm,
)
from app.analysis.pnp import ransac_pnp
from app.analysis.projection import render_lidar_image
from app.analysis.synthetic import street_scene
from app.core.errors import ConfigError, MatchingError, NoConsensus
from app.core.structures import (
    BenchmarkRecord, CalibrationResult, CalibrationRun, PnPResult, Scene, StageOutcome,
)
from app.drivers import kitti, ply
from app.models.schemas import NoiseRange, ProjectionConfig, RunConfig, StageConfig, check_stage_order

logger = logging.getLogger(__name__)

# Purposes mixed into derived seeds
_SEED_INIT, _SEED_ORACLE, _SEED_RANSAC = 0, 1, 2


def derive_seed(seed: int, *keys: int) -> int:
    """Independent, reproducible sub-seed for (seed, keys...)."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def sample_initial_pose(gt: PoseSE3, noise_range: NoiseRange, seed: int) -> PoseSE3:
    """
    Uniform per-axis translation offset in +/-max_translation and independent intrinsic
    roll/pitch/yaw in +/-max_rotation degrees, applied on the camera side of gt.
    """
    if noise_range.max_translation == 0 and noise_range.max_rotation == 0:
        return gt
    rng = np.random.default_rng(seed)
    dt = rng.uniform(-noise_range.max_translation, noise_range.max_translation, 3)
    angles = rng.uniform(-noise_range.max_rotation, noise_range.max_rotation, 3)
    q = Rotation.from_euler("XYZ", angles, degrees=True).as_quat()
    noise = PoseSE3([q[3], q[0], q[1], q[2]], np.zeros(3))
    rotated = compose(noise, PoseSE3(gt.rotation, np.zeros(3)))
    return PoseSE3(rotated.rotation, gt.translation + dt)


def run_stage(cloud: PointCloud, init: PoseSE3, K: CameraIntrinsics, stage: StageConfig,
              gt_for_oracle: Optional[PoseSE3],
              projection: Optional[ProjectionConfig] = None,
              seed: Optional[int] = None) -> PnPResult:
    """Render at init, match, filter, build correspondences and solve PnP."""
    image = render_lidar_image(cloud, init, K, projection)
    matcher = make_matcher(stage.matcher, gt_for_oracle,
                           None if seed is None else derive_seed(seed, _SEED_ORACLE))
    flow = matcher.match(image, cloud, init, K)
    flow = filter_by_uncertainty(flow, stage.keep_quantile)
    corr = to_correspondences(image, flow, cloud)
    ransac = stage.ransac
    if seed is not None:
        ransac = ransac.model_copy(update={"rng_seed": derive_seed(seed, _SEED_RANSAC)})
    return ransac_pnp(corr, K, ransac)


def iterative_localize(cloud: PointCloud, init: PoseSE3, K: CameraIntrinsics,
                       stages: Sequence[StageConfig], gt_for_oracle: Optional[PoseSE3],
                       projection: Optional[ProjectionConfig] = None,
                       seed: Optional[int] = None,
                       report_timing: bool = True) -> List[StageOutcome]:
    """
    Chains the stages, each starting from the previous estimate.
    NoConsensus passes the stage input through; any other failure ends the chain.
    """
    if not stages:
        raise ConfigError("iterative_localize needs at least one stage")
    outcomes: List[StageOutcome] = []
    current = init
    for k, stage in enumerate(stages):
        t0 = time.perf_counter()
        stage_seed = None if seed is None else derive_seed(seed, k)
        try:
            result = run_stage(cloud, current, K, stage, gt_for_oracle, projection, stage_seed)
            outcome = StageOutcome(stage=k, input_pose=current, output_pose=result.pose, result=result)
        except NoConsensus as e:
            logger.warning(f"[Pipeline] stage {k}: no consensus ({e}), keeping input pose")
            outcome = StageOutcome(stage=k, input_pose=current, output_pose=current,
                                   failure=f"NoConsensus: {e}")
        except MatchingError as e:
            logger.warning(f"[Pipeline] stage {k} failed: {type(e).__name__}: {e}")
            outcome = StageOutcome(stage=k, input_pose=current, output_pose=current,
                                   failure=f"{type(e).__name__}: {e}")
            if report_timing:
                outcome.runtime_ms = (time.perf_counter() - t0) * 1e3
            outcomes.append(outcome)
            break
        if report_timing:
            outcome.runtime_ms = (time.perf_counter() - t0) * 1e3
        outcomes.append(outcome)
        current = outcome.output_pose
    return outcomes


# ---------------------------------------------------------------------------
# Scenes and per-seed evaluation
# ---------------------------------------------------------------------------
def load_map(path: str) -> PointCloud:
    return ply.read_ply(path) if str(path).lower().endswith(".ply") else kitti.load_scan(path)


def camera_axes(pose: PoseSE3, frame_tag: str) -> PoseSE3:
    """Re-expresses a pose whose target axes are robot (x forward) ones in pinhole camera axes."""
    return compose(ROBOT_TO_CAMERA, pose) if frame_tag == "robot-x-forward" else pose


def load_scene(run: RunConfig) -> Scene:
    """
    Without map_path the synthetic street. Otherwise the map file, intrinsics and the
    sensor -> map pose of run.frame from the trajectory (inverted to map -> camera).
    """
    if run.map_path is None:
        return street_scene(run.synthetic_points)
    if run.intrinsics_path is None or run.trajectory_path is None:
        raise ConfigError("map_path requires intrinsics_path and trajectory_path")
    cloud = load_map(run.map_path)
    K, frame_tag = kitti.load_intrinsics(run.intrinsics_path)
    trajectory = kitti.load_trajectory(run.trajectory_path)
    if run.frame >= len(trajectory):
        raise ConfigError(f"frame {run.frame} outside trajectory of {len(trajectory)} poses")
    return Scene(cloud, camera_axes(trajectory.poses[run.frame].inverse(), frame_tag), K)


def localize_seed(scene: Scene, run: RunConfig, seed: int
                  ) -> Tuple[List[BenchmarkRecord], Tuple[float, float]]:
    """
    One Monte-Carlo sample: perturb gt, run all stages, one record per configured stage
    (stages after a terminating failure are reported as skipped).
    Also returns the (initial, final) SE(3) log-norm errors for MSEE / MRR.
    """
    init = sample_initial_pose(scene.gt_pose, run.initial_range, derive_seed(seed, _SEED_INIT))
    outcomes = iterative_localize(scene.cloud, init, scene.K, run.stages, scene.gt_pose,
                                  run.projection, seed=seed, report_timing=run.report_timing)
    records = []
    for outcome in outcomes:
        e_t, e_r = pose_errors(scene.gt_pose, outcome.output_pose)
        inliers = outcome.result.inlier_count if outcome.result is not None else 0
        runtime = None if outcome.runtime_ms is None else round(outcome.runtime_ms, 3)
        records.append(BenchmarkRecord(seed=seed, stage=outcome.stage, E_t=e_t, E_r=e_r,
                                       inliers=inliers, runtime_ms=runtime, failure=outcome.failure))
    last = outcomes[-1]
    for k in range(len(outcomes), len(run.stages)):
        records.append(BenchmarkRecord(seed=seed, stage=k, E_t=records[-1].E_t, E_r=records[-1].E_r,
                                       failure=f"skipped after stage {last.stage}"))
    final = outcomes[-1].output_pose
    return records, (se3_log_norm(scene.gt_pose, init), se3_log_norm(scene.gt_pose, final))


def summarize_records(records: Sequence[BenchmarkRecord],
                      log_errors: Optional[Sequence[Tuple[float, float]]] = None,
                      success_threshold: float = config.SUCCESS_TRANSLATION_ERROR) -> Dict:
    """Per-stage and final medians, success rate and, when log-norm errors are given, MSEE / MRR."""
    stages = sorted({r.stage for r in records})
    per_stage = {}
    for k in stages:
        rows = [r for r in records if r.stage == k and r.E_t is not None]
        per_stage[str(k)] = {
            "median_E_t": float(np.median([r.E_t for r in rows])) if rows else None,
            "median_E_r": float(np.median([r.E_r for r in rows])) if rows else None,
            "failures": sum(1 for r in records if r.stage == k and r.failure),
        }

    final: Dict[int, BenchmarkRecord] = {}
    for r in records:
        if r.seed not in final or r.stage >= final[r.seed].stage:
            final[r.seed] = r
    finals = [r for r in final.values() if r.E_t is not None]
    summary = {
        "summary": True,
        "seeds": len(final),
        "stages": per_stage,
        "median_E_t": float(np.median([r.E_t for r in finals])) if finals else None,
        "median_E_r": float(np.median([r.E_r for r in finals])) if finals else None,
        "success_rate": (sum(1 for r in finals if r.E_t < success_threshold) / len(final)) if final else 0.0,
        "MSEE": None,
        "MRR": None,
    }
    if log_errors:
        eta = [e[0] for e in log_errors]
        err = [e[1] for e in log_errors]
        if all(x > 0 for x in eta):
            summary["MSEE"], summary["MRR"] = msee_mrr_from_errors(eta, err)
        else:
            logger.warning("[Summary] zero initial error present, MSEE/MRR not reported")
    return summary


# ---------------------------------------------------------------------------
# Extrinsic calibration
# ---------------------------------------------------------------------------
def calibrate_frames(frames: Sequence[PointCloud], extrinsic_gt: PoseSE3, K: CameraIntrinsics,
                     stages: Sequence[StageConfig], seeds: Sequence[int],
                     projection: Optional[ProjectionConfig] = None,
                     initial_range: Optional[NoiseRange] = None) -> CalibrationResult:
    """
    Every (frame, seed) pair perturbs the LiDAR -> camera extrinsic, runs the staged chain on the
    single scan and contributes its final estimate to the temporal aggregation.
    """
    check_stage_order(list(stages))
    if not frames or not seeds:
        raise ConfigError("calibrate_frames needs at least one frame and one seed")
    noise = initial_range or stages[0].noise_range
    runs: List[CalibrationRun] = []
    for i, scan in enumerate(frames):
        for s in seeds:
            run_seed = derive_seed(s, i)
            init = sample_initial_pose(extrinsic_gt, noise, derive_seed(run_seed, _SEED_INIT))
            outcomes = iterative_localize(scan, init, K, stages, extrinsic_gt, projection, seed=run_seed)
            runs.append(CalibrationRun(frame=i, seed=s, initial_pose=init, outcomes=outcomes))
        logger.info(f"[Calibrate] frame {i + 1}/{len(frames)} done")

    aggregation = aggregate_extrinsics([r.final_pose for r in runs])
    eta = [se3_log_norm(extrinsic_gt, r.initial_pose) for r in runs]
    err = [se3_log_norm(extrinsic_gt, r.final_pose) for r in runs]
    msee, mrr = msee_mrr_from_errors(eta, err)
    logger.info(f"[Calibrate] {len(runs)} runs, MSEE {msee:.4f}, MRR {100 * mrr:.1f}%")
    return CalibrationResult(runs=runs, aggregation=aggregation, msee=msee, mrr=mrr)
