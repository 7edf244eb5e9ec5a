"""
Map building (scan aggregation, dynamic-label removal, voxel grid) and map colorization.
"""
import logging
from typing import Iterable, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import ndimage

import config
from app.analysis.geometry import CameraIntrinsics, PointCloud, PoseSE3, project_points, transform_points
from app.analysis.projection import render_lidar_image
from app.core.errors import EmptyProjection, LabelLengthMismatch
from app.models.schemas import OcclusionConfig, ProjectionConfig, VoxelGridConfig

logger = logging.getLogger(__name__)


def voxel_downsample(cloud: PointCloud, grid: Optional[VoxelGridConfig] = None) -> PointCloud:
    """One point per occupied voxel floor(p / s): centroid of its members, attributes averaged."""
    grid = grid or VoxelGridConfig()
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points / grid.voxel_size).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse)

    def average(values: np.ndarray) -> np.ndarray:
        return np.bincount(inverse, weights=values, minlength=counts.size) / counts

    points = np.stack([average(cloud.points[:, k]) for k in range(3)], axis=1)
    intensity = None if cloud.intensity is None else np.clip(average(cloud.intensity), 0.0, 1.0)
    colors = None
    color_mask = None
    if cloud.colors is not None:
        colored = np.ones(len(cloud), dtype=bool) if cloud.color_mask is None else cloud.color_mask
        n_colored = np.bincount(inverse, weights=colored.astype(np.float64), minlength=counts.size)
        safe = np.maximum(n_colored, 1.0)
        colors = np.stack([
            np.bincount(inverse, weights=np.where(colored, cloud.colors[:, k], 0.0), minlength=counts.size) / safe
            for k in range(3)
        ], axis=1)
        colors = np.clip(np.round(colors), 0, 255).astype(np.uint8)
        color_mask = n_colored > 0
    return PointCloud(points, intensity, colors, color_mask)


def build_map(scans: Sequence[Tuple[PointCloud, PoseSE3]],
              grid: Optional[VoxelGridConfig] = None,
              labels: Optional[Sequence[np.ndarray]] = None,
              dynamic_labels: Iterable[int] = ()) -> PointCloud:
    """
    Transforms every scan with its sensor -> map pose, drops points carrying a dynamic label,
    concatenates and voxel-downsamples.
    """
    if labels is not None and len(labels) != len(scans):
        raise LabelLengthMismatch(f"{len(labels)} label arrays for {len(scans)} scans")
    dynamic: Set[int] = set(int(d) for d in dynamic_labels)

    chunks, intensities = [], []
    for i, (scan, pose) in enumerate(scans):
        keep = np.ones(len(scan), dtype=bool)
        if labels is not None:
            lab = np.asarray(labels[i]).reshape(-1)
            if lab.shape[0] != len(scan):
                raise LabelLengthMismatch(f"Scan {i}: {lab.shape[0]} labels for {len(scan)} points")
            if dynamic:
                keep = ~np.isin(lab, list(dynamic))
        world = transform_points(pose, scan.subset(np.flatnonzero(keep)))
        chunks.append(world.points)
        intensities.append(world.intensity)

    if not chunks:
        return PointCloud(np.empty((0, 3)))
    points = np.concatenate(chunks)
    intensity = None
    if all(x is not None for x in intensities):
        intensity = np.concatenate(intensities)
    merged = voxel_downsample(PointCloud(points, intensity), grid)
    logger.info(f"[Map] {len(scans)} scans, {points.shape[0]} points -> {len(merged)} voxels")
    return merged


def colorize_map(cloud: PointCloud,
                 images: Sequence[Tuple[np.ndarray, PoseSE3]],
                 K: CameraIntrinsics,
                 point_times: Optional[np.ndarray] = None,
                 image_times: Optional[Sequence[float]] = None,
                 occlusion: Optional[OcclusionConfig] = None,
                 max_depth: float = config.MAX_DEPTH,
                 depth_tolerance: float = config.COLORIZE_DEPTH_TOLERANCE) -> PointCloud:
    """
    Colors each point with a bilinear sample from the nearest-in-time image that sees it.
    A point is seen when it projects into the image and lies within `depth_tolerance` of the
    occlusion-filtered LiDAR-image depth at its pixel. Without timestamps frames are tried in order.
    Point geometry is passed through untouched.
    """
    if not images:
        raise ValueError("colorize_map needs at least one image")
    occlusion = occlusion or OcclusionConfig(direction="visible_if_smaller")
    proj_cfg = ProjectionConfig(max_depth=max_depth, occlusion=occlusion)
    n = len(cloud)
    H, W = K.shape
    timed = point_times is not None and image_times is not None

    colors = np.zeros((n, 3), dtype=np.uint8)
    best_rank = np.full(n, np.inf)

    for f, (rgb, pose) in enumerate(images):
        rgb = np.asarray(rgb)
        if rgb.shape[:2] != (H, W):
            logger.warning(f"[Colorize] frame {f}: image {rgb.shape[:2]} does not match intrinsics {(H, W)}, skipped")
            continue
        try:
            lidar = render_lidar_image(cloud, pose, K, proj_cfg)
        except EmptyProjection:
            logger.warning(f"[Colorize] frame {f}: map not in view, skipped")
            continue

        uv, z, in_front = project_points(K, pose.apply(cloud.points))
        with np.errstate(invalid="ignore"):
            ui = np.floor(uv[:, 0] + 0.5)
            vi = np.floor(uv[:, 1] + 0.5)
            inside = in_front & (ui >= 0) & (ui < W) & (vi >= 0) & (vi < H)
        idx = np.flatnonzero(inside)
        surface = lidar.depth[vi[idx].astype(np.int64), ui[idx].astype(np.int64)]
        seen = idx[(surface > 0) & (z[idx] <= surface + depth_tolerance)]

        rank = np.abs(point_times[seen] - image_times[f]) if timed else np.full(seen.size, float(f))
        better = rank < best_rank[seen]
        seen, rank = seen[better], rank[better]
        if seen.size == 0:
            continue

        coords = [uv[seen, 1], uv[seen, 0]]
        if rgb.ndim == 2:
            rgb = np.repeat(rgb[..., None], 3, axis=2)
        for c in range(3):
            sample = ndimage.map_coordinates(rgb[..., c].astype(np.float64), coords, order=1, mode="nearest")
            colors[seen, c] = np.clip(np.round(sample), 0, 255).astype(np.uint8)
        best_rank[seen] = rank
        logger.debug(f"[Colorize] frame {f}: {seen.size} points colored")

    mask = np.isfinite(best_rank)
    logger.info(f"[Colorize] {int(mask.sum())} of {n} points colored from {len(images)} frames")
    return PointCloud(cloud.points, cloud.intensity, colors, mask)
