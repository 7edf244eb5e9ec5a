"""
LiDAR-image rendering: z-buffered pinhole projection of a map at a candidate pose,
the four-sector occlusion filter, Fourier depth features and training-time augmentations.
"""
import logging
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

import config
from app.analysis.geometry import (
    CameraIntrinsics, PointCloud, PoseSE3, project_points,
)
from app.core.errors import EmptyProjection
from app.core.structures import EMPTY_INDEX, LidarImage
from app.models.schemas import OcclusionConfig, ProjectionConfig

logger = logging.getLogger(__name__)

_SECTOR_N, _SECTOR_E, _SECTOR_S, _SECTOR_W = range(4)


def _pixel_bins(uv: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Round-half-up binning of continuous projections to integer pixels."""
    return np.floor(uv[:, 0] + 0.5), np.floor(uv[:, 1] + 0.5)


def render_lidar_image(cloud: PointCloud, pose: PoseSE3, K: CameraIntrinsics,
                       cfg: Optional[ProjectionConfig] = None) -> LidarImage:
    """
    Project `cloud` (map frame) with `pose` (map -> camera) and keep the nearest point per pixel.
    Ties on depth go to the lower point index. The occlusion filter runs when cfg.occlusion is set.
    """
    cfg = cfg or ProjectionConfig()
    H, W = K.shape
    if len(cloud) == 0:
        raise EmptyProjection("Empty point cloud")

    pts_cam = pose.apply(cloud.points)
    uv, z, in_front = project_points(K, pts_cam)
    with np.errstate(invalid="ignore"):
        ui, vi = _pixel_bins(uv)
        keep = (in_front & (z <= cfg.max_depth)
                & (ui >= 0) & (ui < W) & (vi >= 0) & (vi < H))

    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise EmptyProjection(f"No point of {len(cloud)} projects into the {W}x{H} image")

    flat = vi[idx].astype(np.int64) * W + ui[idx].astype(np.int64)
    order = np.lexsort((idx, z[idx], flat))
    flat_sorted = flat[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    winners = idx[order][first]
    pixels = flat_sorted[first]

    depth = np.zeros(H * W)
    source_index = np.full(H * W, EMPTY_INDEX, dtype=np.int64)
    uv_grid = np.full((H * W, 2), np.nan)
    depth[pixels] = z[winners]
    source_index[pixels] = winners
    uv_grid[pixels] = uv[winners]

    image = LidarImage(depth.reshape(H, W), source_index.reshape(H, W), uv_grid.reshape(H, W, 2))
    logger.debug(f"[Render] {idx.size} of {len(cloud)} points in view, {winners.size} pixels after z-buffer")

    if cfg.occlusion is not None:
        image = occlusion_filter(image, cloud, pose, cfg.occlusion)
        if image.valid_count == 0:
            raise EmptyProjection("Every projected point was flagged as occluded")
    return image


def _sector_of(dy: int, dx: int) -> int:
    """Diagonal split of the window; diagonal cells go to the clockwise neighbour sector."""
    if abs(dy) > abs(dx):
        return _SECTOR_N if dy < 0 else _SECTOR_S
    if abs(dx) > abs(dy):
        return _SECTOR_E if dx > 0 else _SECTOR_W
    if dy < 0:
        return _SECTOR_E if dx > 0 else _SECTOR_N
    return _SECTOR_S if dx > 0 else _SECTOR_W


def occlusion_filter(image: LidarImage, cloud: PointCloud, pose: PoseSE3,
                     cfg: Optional[OcclusionConfig] = None) -> LidarImage:
    """
    Clears pixels whose point is hidden behind nearer points of its K x K neighbourhood.

    For the point P_i of a pixel and every neighbour P_j in the window, alpha_ij is the cosine
    between the direction to the camera centre and the direction to P_j. The per-sector maxima
    of alpha are summed and compared with the threshold. Empty sectors do not contribute and a
    pixel without neighbours stays visible.
    """
    cfg = cfg or OcclusionConfig()
    H, W = image.shape
    r = cfg.kernel_size // 2
    mask = image.mask

    # Cosines are invariant under the rigid map -> camera transform: work in the camera frame
    grid = np.full((H, W, 3), np.nan)
    grid[mask] = pose.apply(cloud.points[image.source_index[mask]])
    with np.errstate(invalid="ignore", divide="ignore"):
        to_camera = -grid / np.linalg.norm(grid, axis=-1, keepdims=True)

    padded = np.full((H + 2 * r, W + 2 * r, 3), np.nan)
    padded[r:r + H, r:r + W] = grid
    sector_max = np.full((4, H, W), -np.inf)

    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            neighbour = padded[r + dy:r + dy + H, r + dx:r + dx + W]
            diff = neighbour - grid
            dist = np.linalg.norm(diff, axis=-1)
            with np.errstate(invalid="ignore", divide="ignore"):
                alpha = np.einsum("hwc,hwc->hw", to_camera, diff) / dist
                ok = np.isfinite(alpha) & (dist > 0)
            s = _sector_of(dy, dx)
            sector_max[s] = np.where(ok, np.maximum(sector_max[s], alpha), sector_max[s])

    present = np.isfinite(sector_max)
    total = np.where(present, sector_max, 0.0).sum(axis=0)
    if cfg.direction == "visible_if_greater":
        visible = total > cfg.threshold
    else:
        visible = total < cfg.threshold
    visible |= ~present.any(axis=0)

    drop = mask & ~visible
    logger.debug(f"[Occlusion] K={cfg.kernel_size} thr={cfg.threshold} ({cfg.direction}): "
                 f"removed {int(drop.sum())} of {int(mask.sum())} pixels")
    return image.cleared(drop)


def restore_subpixel(image: LidarImage, cloud: PointCloud, pose: PoseSE3, K: CameraIntrinsics) -> LidarImage:
    """Recomputes continuous projections for an image whose uv channel was not stored (LIMG files)."""
    mask = image.mask
    uv = np.full(image.shape + (2,), np.nan)
    proj, _, _ = project_points(K, pose.apply(cloud.points[image.source_index[mask]]))
    uv[mask] = proj
    return LidarImage(image.depth, image.source_index, uv)


def fourier_map(d, m: int = config.FOURIER_FREQUENCIES) -> np.ndarray:
    """
    [d, sin(pi 2^0 d), cos(pi 2^0 d), ..., sin(pi 2^(m-1) d), cos(pi 2^(m-1) d)].
    Array input maps elementwise onto a trailing axis of length 2m+1.
    """
    if m < 0:
        raise ValueError(f"Number of frequencies must be >= 0, got {m}")
    d = np.asarray(d, dtype=np.float64)
    phase = d[..., None] * (np.pi * 2.0 ** np.arange(m))
    out = np.empty(d.shape + (2 * m + 1,))
    out[..., 0] = d
    out[..., 1::2] = np.sin(phase)
    out[..., 2::2] = np.cos(phase)
    return out


# ---------------------------------------------------------------------------
# Augmentations (robot frame: X forward, Y left, Z up)
# ---------------------------------------------------------------------------
def mirror_augmentation(cloud: PointCloud, K: CameraIntrinsics) -> Tuple[PointCloud, CameraIntrinsics]:
    pts = cloud.points.copy()
    pts[:, 1] *= -1.0
    K_mirror = CameraIntrinsics(K.fx, K.fy, K.width - K.cx, K.cy, K.width, K.height)
    return cloud.with_points(pts), K_mirror


def roll_augmentation(cloud: PointCloud, angle_deg: float) -> PointCloud:
    """Rotation about the forward axis, the 3D counterpart of an image rotation by angle_deg."""
    rot = Rotation.from_euler("x", angle_deg, degrees=True)
    return cloud.with_points(rot.apply(cloud.points))


def random_augmentation(cloud: PointCloud, K: CameraIntrinsics, seed: int,
                        max_roll_deg: float = config.MAX_ROLL_AUGMENTATION_DEG
                        ) -> Tuple[PointCloud, CameraIntrinsics, Dict[str, float]]:
    rng = np.random.default_rng(seed)
    mirrored = bool(rng.random() < 0.5)
    roll = float(rng.uniform(-max_roll_deg, max_roll_deg))
    if mirrored:
        cloud, K = mirror_augmentation(cloud, K)
    cloud = roll_augmentation(cloud, roll)
    return cloud, K, {"mirrored": mirrored, "roll_deg": roll}
