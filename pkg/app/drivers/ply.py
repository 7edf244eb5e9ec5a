"""ASCII PLY export of (optionally colored) point clouds, plus the matching reader (open3d)."""
import logging
import os

import numpy as np
import open3d as o3d

from app.analysis.geometry import PointCloud
from app.core.errors import IoFailure, MalformedFile

logger = logging.getLogger(__name__)


def to_open3d(cloud: PointCloud) -> o3d.geometry.PointCloud:
    """Points as double x y z; colors scaled to [0, 1], unset colors black."""
    pcd = o3d.geometry.PointCloud()
    pcd.points = o3d.utility.Vector3dVector(cloud.points)
    if cloud.colors is not None:
        colors = cloud.colors.astype(np.float64) / 255.0
        if cloud.color_mask is not None:
            colors[~cloud.color_mask] = 0.0
        pcd.colors = o3d.utility.Vector3dVector(colors)
    return pcd


def from_open3d(pcd: o3d.geometry.PointCloud) -> PointCloud:
    colors = None
    if pcd.has_colors():
        colors = np.rint(np.asarray(pcd.colors) * 255.0).clip(0, 255).astype(np.uint8)
    return PointCloud(np.asarray(pcd.points, dtype=np.float64), colors=colors)


def export_ply(cloud: PointCloud, path, colored_only: bool = False):
    """
    Vertices with double x y z and, for colored clouds, uchar red green blue.
    Points without a color are written black unless colored_only drops them.
    """
    if colored_only and cloud.colors is not None and cloud.color_mask is not None:
        cloud = cloud.subset(np.flatnonzero(cloud.color_mask))
    if len(cloud) == 0:
        raise IoFailure(f"Cannot write PLY {path}: the cloud has no points")

    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    except OSError as e:
        raise IoFailure(f"Cannot write PLY {path}: {e}") from e
    if not o3d.io.write_point_cloud(str(path), to_open3d(cloud), write_ascii=True):
        raise IoFailure(f"Cannot write PLY {path}")
    logger.debug(f"[PLY] wrote {len(cloud)} points to {path}")


def read_ply(path) -> PointCloud:
    if not os.path.isfile(path):
        raise IoFailure(f"PLY file not found: {path}")
    try:
        pcd = o3d.io.read_point_cloud(str(path), format="ply")
    except RuntimeError as e:
        raise MalformedFile(f"{path}: {e}") from e
    # open3d reports unreadable files as empty clouds
    if pcd.is_empty():
        raise MalformedFile(f"{path}: no readable vertices")
    return from_open3d(pcd)
