"""
Displacement fields between two poses, the matcher interface and the 2D-3D correspondence builder.
"""
import logging
import math
from abc import ABC, abstractmethod
from typing import Optional, Tuple

import numpy as np

import config
from app.analysis.geometry import CameraIntrinsics, PointCloud, PoseSE3, project_points
from app.analysis.projection import render_lidar_image
from app.core.errors import ConfigError, DimensionMismatch
from app.core.structures import CorrespondenceSet, FlowField, LidarImage
from app.drivers.binary_codec import load_flow
from app.models.schemas import MatcherConfig, OracleNoiseConfig, ProjectionConfig

logger = logging.getLogger(__name__)


def flow_from_image(image: LidarImage, cloud: PointCloud, gt: PoseSE3, K: CameraIntrinsics) -> FlowField:
    """Displacement of every stored point from its render-pose projection to its projection at `gt`."""
    H, W = image.shape
    mask = image.mask
    du = np.zeros((H, W))
    dv = np.zeros((H, W))
    valid = np.zeros((H, W), dtype=bool)

    uv_gt, _, in_front = project_points(K, gt.apply(cloud.points[image.source_index[mask]]))
    uv_init = image.uv[mask]
    du_m = np.where(in_front, uv_gt[:, 0] - uv_init[:, 0], 0.0)
    dv_m = np.where(in_front, uv_gt[:, 1] - uv_init[:, 1], 0.0)
    du[mask] = du_m
    dv[mask] = dv_m
    valid[mask] = in_front
    return FlowField(du, dv, np.ones((H, W)), np.ones((H, W)), valid)


def ground_truth_flow(cloud: PointCloud, init: PoseSE3, gt: PoseSE3, K: CameraIntrinsics,
                      cfg: Optional[ProjectionConfig] = None) -> Tuple[LidarImage, FlowField]:
    image = render_lidar_image(cloud, init, K, cfg)
    flow = flow_from_image(image, cloud, gt, K)
    logger.debug(f"[GTFlow] {flow.valid_count} valid of {image.valid_count} rendered pixels")
    return image, flow


def oracle_match(gt_flow: FlowField, noise: OracleNoiseConfig) -> FlowField:
    """
    Synthetic matcher output: ground-truth displacements plus Gaussian noise, with a seeded
    subset of exactly round(outlier_fraction * n) valid pixels replaced by uniform outliers.
    """
    rng = np.random.default_rng(noise.rng_seed)
    valid_idx = np.flatnonzero(gt_flow.valid)
    n = valid_idx.size

    du = gt_flow.du.copy().reshape(-1)
    dv = gt_flow.dv.copy().reshape(-1)
    sigma_u = gt_flow.sigma_u.copy().reshape(-1)
    sigma_v = gt_flow.sigma_v.copy().reshape(-1)

    if noise.gaussian_sigma > 0 and n:
        eps = rng.normal(0.0, noise.gaussian_sigma, size=(n, 2))
        du[valid_idx] += eps[:, 0]
        dv[valid_idx] += eps[:, 1]

    n_out = int(round(noise.outlier_fraction * n))
    outliers = valid_idx[rng.choice(n, size=n_out, replace=False)] if n_out else valid_idx[:0]
    if n_out:
        disp = rng.uniform(-noise.outlier_range, noise.outlier_range, size=(n_out, 2))
        du[outliers] = disp[:, 0]
        dv[outliers] = disp[:, 1]

    if noise.blind:
        sigma_u[valid_idx] = 1.0
        sigma_v[valid_idx] = 1.0
    else:
        sigma_in = max(noise.gaussian_sigma, config.ORACLE_MIN_INLIER_SIGMA)
        sigma_u[valid_idx] = sigma_in
        sigma_v[valid_idx] = sigma_in
        if n_out:
            lo = 5.0 * noise.gaussian_sigma + 1.0
            hi = max(noise.outlier_range, lo)
            sig = rng.uniform(lo, hi, size=(n_out, 2))
            sigma_u[outliers] = sig[:, 0]
            sigma_v[outliers] = sig[:, 1]

    shape = gt_flow.shape
    return FlowField(du.reshape(shape), dv.reshape(shape), sigma_u.reshape(shape),
                     sigma_v.reshape(shape), gt_flow.valid.copy())


def filter_by_uncertainty(flow: FlowField, keep_quantile: float) -> FlowField:
    """
    Keeps the ceil(keep_quantile * n) valid pixels of lowest sigma_u + sigma_v.
    Ties are resolved by flat (row-major) pixel index.
    """
    if not 0.0 < keep_quantile <= 1.0:
        raise ConfigError(f"keep_quantile must be in (0, 1], got {keep_quantile}")
    if keep_quantile == 1.0:
        return flow

    idx = np.flatnonzero(flow.valid)
    n_keep = math.ceil(keep_quantile * idx.size - 1e-9)
    score = (flow.sigma_u + flow.sigma_v).reshape(-1)[idx]
    order = np.lexsort((idx, score))
    valid = np.zeros(flow.valid.size, dtype=bool)
    valid[idx[order[:n_keep]]] = True
    logger.debug(f"[Filter] kept {n_keep} of {idx.size} matches (q={keep_quantile})")
    return FlowField(flow.du, flow.dv, flow.sigma_u, flow.sigma_v, valid.reshape(flow.shape))


def to_correspondences(image: LidarImage, flow: FlowField, cloud: PointCloud) -> CorrespondenceSet:
    if image.shape != flow.shape:
        raise DimensionMismatch(f"LiDAR-image {image.shape} vs flow {flow.shape}")
    sel = flow.valid & image.mask
    points3d = cloud.points[image.source_index[sel]]
    pixels2d = image.uv[sel] + np.stack([flow.du[sel], flow.dv[sel]], axis=-1)
    weights = 1.0 / (flow.sigma_u[sel] + flow.sigma_v[sel])
    return CorrespondenceSet(points3d, pixels2d, weights)


def upscale_flow(flow: FlowField, factor: int, shape: Optional[Tuple[int, int]] = None) -> FlowField:
    """
    Nearest-neighbour upsampling by an integer factor, displacements and sigmas scaled by it.
    `shape` crops the result to a target resolution.
    """
    if factor < 1:
        raise ConfigError(f"factor must be >= 1, got {factor}")
    if factor == 1 and shape is None:
        return flow

    def up(grid):
        out = np.repeat(np.repeat(grid, factor, axis=0), factor, axis=1)
        return out if shape is None else out[:shape[0], :shape[1]]

    return FlowField(up(flow.du) * factor, up(flow.dv) * factor,
                     up(flow.sigma_u) * factor, up(flow.sigma_v) * factor, up(flow.valid))


def downscale_flow(flow: FlowField, factor: int) -> FlowField:
    """Block average over valid members; a block is valid when any member is. Values divided by factor."""
    if factor < 1:
        raise ConfigError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return flow
    H, W = flow.shape
    Hd, Wd = -(-H // factor), -(-W // factor)

    def blocks(grid, fill):
        padded = np.full((Hd * factor, Wd * factor), fill, dtype=grid.dtype)
        padded[:H, :W] = grid
        return padded.reshape(Hd, factor, Wd, factor)

    valid = blocks(flow.valid, False)
    count = valid.sum(axis=(1, 3))
    out_valid = count > 0
    safe = np.maximum(count, 1)

    def mean(grid, empty):
        total = np.where(valid, blocks(grid, 0.0), 0.0).sum(axis=(1, 3))
        return np.where(out_valid, total / safe / factor, empty)

    return FlowField(mean(flow.du, 0.0), mean(flow.dv, 0.0),
                     mean(flow.sigma_u, 1.0), mean(flow.sigma_v, 1.0), out_valid)


# ---------------------------------------------------------------------------
# Matchers
# ---------------------------------------------------------------------------
class FlowMatcher(ABC):
    """Producer of a FlowField for a LiDAR-image rendered at `init`."""

    @abstractmethod
    def match(self, image: LidarImage, cloud: PointCloud, init: PoseSE3, K: CameraIntrinsics) -> FlowField:
        ...


class OracleMatcher(FlowMatcher):
    """Ground-truth displacements degraded by the oracle noise model."""

    def __init__(self, gt: PoseSE3, noise: Optional[OracleNoiseConfig] = None):
        self.gt = gt
        self.noise = noise or OracleNoiseConfig()

    def match(self, image, cloud, init, K):
        return oracle_match(flow_from_image(image, cloud, self.gt, K), self.noise)


class ExternalFlowMatcher(FlowMatcher):
    """Reads a precomputed FLOW file, e.g. the output of a learned matcher."""

    def __init__(self, path: str):
        self.path = path

    def match(self, image, cloud, init, K):
        flow = load_flow(self.path)
        if flow.shape != image.shape:
            raise DimensionMismatch(f"Flow file {self.path} is {flow.shape}, LiDAR-image is {image.shape}")
        valid = flow.valid & image.mask
        return FlowField(flow.du, flow.dv, flow.sigma_u, flow.sigma_v, valid)


def make_matcher(cfg: MatcherConfig, gt: Optional[PoseSE3], seed: Optional[int] = None) -> FlowMatcher:
    if cfg.kind == "external":
        return ExternalFlowMatcher(cfg.flow_path)
    if gt is None:
        raise ConfigError("The oracle matcher needs a ground-truth pose")
    noise = cfg.oracle if seed is None else cfg.oracle.model_copy(update={"rng_seed": seed})
    return OracleMatcher(gt, noise)
