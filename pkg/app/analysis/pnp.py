"""
Camera pose from 2D-3D correspondences: EPnP, RANSAC with batched scoring and
Levenberg-Marquardt refinement on SE(3).
"""
import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

import config
from app.analysis.geometry import CameraIntrinsics, PoseSE3, compose, hat, se3_exp
from app.core.errors import DegenerateConfiguration, GeometryError, NoConsensus, TooFewPoints
from app.core.structures import CorrespondenceSet, PnPResult
from app.models.schemas import RansacConfig

logger = logging.getLogger(__name__)

_GN_ITERATIONS = 8


# ---------------------------------------------------------------------------
# Degeneracy tests
# ---------------------------------------------------------------------------
def _principal_spreads(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centroid, eigenvalues (descending) and eigenvectors (columns) of the point covariance."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    evals, evecs = np.linalg.eigh(centered.T @ centered / points.shape[0])
    return centroid, np.clip(evals[::-1], 0.0, None), evecs[:, ::-1]


def is_near_collinear(points: np.ndarray, max_angle_deg: float = config.COLLINEAR_MAX_ANGLE_DEG) -> bool:
    """True when the second principal spread is within max_angle_deg of vanishing."""
    _, evals, _ = _principal_spreads(np.asarray(points, dtype=np.float64))
    if evals[0] <= 0.0:
        return True
    return math.sqrt(evals[1] / evals[0]) < math.tan(math.radians(max_angle_deg))


# ---------------------------------------------------------------------------
# EPnP
# ---------------------------------------------------------------------------
def _beta_system(kernel: np.ndarray, ctrl_world: np.ndarray, n_beta: int) -> Tuple[np.ndarray, np.ndarray, list]:
    """
    Linearized distance constraints ||c_a - c_b||^2 = ||C_a - C_b||^2 in the products beta_k beta_l.
    Falls back to the beta_1 beta_j subset when there are more products than constraints.
    """
    nc = ctrl_world.shape[0]
    pairs = [(a, b) for a in range(nc) for b in range(a + 1, nc)]
    products = [(k, l) for k in range(n_beta) for l in range(k, n_beta)]
    if len(products) > len(pairs):
        products = [(0, j) for j in range(n_beta)]

    L = np.empty((len(pairs), len(products)))
    rho = np.empty(len(pairs))
    for row, (a, b) in enumerate(pairs):
        dv = kernel[:, a, :] - kernel[:, b, :]
        for col, (k, l) in enumerate(products):
            d = dv[k] @ dv[l]
            L[row, col] = d if k == l else 2.0 * d
        rho[row] = np.sum((ctrl_world[a] - ctrl_world[b]) ** 2)
    return L, rho, products


def _solve_betas(kernel: np.ndarray, ctrl_world: np.ndarray, n_beta: int) -> np.ndarray:
    L, rho, products = _beta_system(kernel, ctrl_world, n_beta)
    b, *_ = np.linalg.lstsq(L, rho, rcond=None)
    prods = dict(zip(products, b))
    b11 = prods[(0, 0)]
    beta = np.zeros(n_beta)
    beta[0] = math.sqrt(abs(b11))
    if beta[0] > 0:
        for j in range(1, n_beta):
            beta[j] = prods[(0, j)] / beta[0]
    return _refine_betas(kernel, ctrl_world, beta)


def _refine_betas(kernel: np.ndarray, ctrl_world: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Gauss-Newton on the distance residuals."""
    nc = ctrl_world.shape[0]
    pairs = [(a, b) for a in range(nc) for b in range(a + 1, nc)]
    dvs = np.array([kernel[:, a, :] - kernel[:, b, :] for a, b in pairs])  # (P, N, 3)
    rho = np.array([np.sum((ctrl_world[a] - ctrl_world[b]) ** 2) for a, b in pairs])
    for _ in range(_GN_ITERATIONS):
        diff = np.einsum("k,pkc->pc", beta, dvs)
        residual = np.sum(diff ** 2, axis=1) - rho
        J = 2.0 * np.einsum("pc,pkc->pk", diff, dvs)
        step, *_ = np.linalg.lstsq(J, -residual, rcond=None)
        beta = beta + step
        if np.linalg.norm(step) < 1e-14 * max(1.0, np.linalg.norm(beta)):
            break
    return beta


def _pose_from_camera_points(world: np.ndarray, cam: np.ndarray) -> PoseSE3:
    mw, mc = world.mean(axis=0), cam.mean(axis=0)
    rot, _ = Rotation.align_vectors(cam - mc, world - mw)
    R = rot.as_matrix()
    m = np.eye(4)
    m[:3, :3] = R
    m[:3, 3] = mc - R @ mw
    return PoseSE3.from_matrix(m)


def epnp(corr: CorrespondenceSet, K: CameraIntrinsics) -> PoseSE3:
    """Closed-form EPnP with Gauss-Newton polish of the null-space coefficients."""
    n = len(corr)
    if n < 4:
        raise TooFewPoints(f"EPnP needs at least 4 correspondences, got {n}")
    X = corr.points3d
    centroid, evals, evecs = _principal_spreads(X)
    if evals[0] <= 0.0 or evals[1] / evals[0] < 1e-12:
        raise DegenerateConfiguration("Collinear 3D points")
    planar = evals[2] / evals[0] < 1e-10
    n_axes = 2 if planar else 3

    scales = np.sqrt(evals[:n_axes])
    axes = evecs[:, :n_axes]
    ctrl_world = np.vstack([centroid, centroid + (axes * scales).T])
    nc = ctrl_world.shape[0]

    alphas = np.empty((n, nc))
    alphas[:, 1:] = (X - centroid) @ axes / scales
    alphas[:, 0] = 1.0 - alphas[:, 1:].sum(axis=1)

    # Normalized image coordinates
    un = (corr.pixels2d[:, 0] - K.cx) / K.fx
    vn = (corr.pixels2d[:, 1] - K.cy) / K.fy
    M = np.zeros((2 * n, 3 * nc))
    M[0::2, 0::3] = alphas
    M[0::2, 2::3] = -alphas * un[:, None]
    M[1::2, 1::3] = alphas
    M[1::2, 2::3] = -alphas * vn[:, None]

    _, _, Vt = np.linalg.svd(M, full_matrices=2 * n < 3 * nc)
    best: Optional[Tuple[float, PoseSE3]] = None
    for n_beta in range(1, min(4, nc) + 1):
        kernel = Vt[::-1][:n_beta].reshape(n_beta, nc, 3)
        beta = _solve_betas(kernel, ctrl_world, n_beta)
        ctrl_cam = np.einsum("k,kac->ac", beta, kernel)
        cam = alphas @ ctrl_cam
        if np.mean(cam[:, 2]) < 0:
            cam = -cam
        if not np.all(np.isfinite(cam)) or not np.any(cam):
            continue
        try:
            pose = _pose_from_camera_points(X, cam)
        except (ValueError, np.linalg.LinAlgError):
            continue
        err = float(np.mean(reprojection_errors(pose, corr, K)))
        if best is None or err < best[0]:
            best = (err, pose)

    if best is None:
        raise DegenerateConfiguration("EPnP produced no finite solution")
    return best[1]


# ---------------------------------------------------------------------------
# Reprojection
# ---------------------------------------------------------------------------
def reprojection_errors(pose: PoseSE3, corr: CorrespondenceSet, K: CameraIntrinsics) -> np.ndarray:
    """Pixel distance per correspondence; +inf where the point is not in front of the camera."""
    P = pose.apply(corr.points3d)
    z = P[:, 2]
    front = z > config.DEPTH_EPSILON
    zs = np.where(front, z, 1.0)
    du = K.fx * P[:, 0] / zs + K.cx - corr.pixels2d[:, 0]
    dv = K.fy * P[:, 1] / zs + K.cy - corr.pixels2d[:, 1]
    return np.where(front, np.hypot(du, dv), np.inf)


def _batched_errors(rotations: np.ndarray, translations: np.ndarray,
                    corr: CorrespondenceSet, K: CameraIntrinsics) -> np.ndarray:
    """(B, n) reprojection errors of B hypotheses at once."""
    P = corr.points3d[None] @ rotations.transpose(0, 2, 1) + translations[:, None, :]
    z = P[..., 2]
    front = z > config.DEPTH_EPSILON
    zs = np.where(front, z, 1.0)
    du = K.fx * P[..., 0] / zs + K.cx - corr.pixels2d[None, :, 0]
    dv = K.fy * P[..., 1] / zs + K.cy - corr.pixels2d[None, :, 1]
    return np.where(front, np.hypot(du, dv), np.inf)


def _inlier_stats(errors: np.ndarray, threshold: float) -> Tuple[np.ndarray, float]:
    inliers = np.flatnonzero(errors <= threshold)
    rms = float(np.sqrt(np.mean(errors[inliers] ** 2))) if inliers.size else math.inf
    return inliers, rms


# ---------------------------------------------------------------------------
# RANSAC
# ---------------------------------------------------------------------------
def _required_iterations(inlier_ratio: float, confidence: float) -> float:
    if inlier_ratio <= 0.0:
        return math.inf
    w4 = inlier_ratio ** 4
    if w4 >= 1.0:
        return 0.0
    return math.log(1.0 - confidence) / math.log(1.0 - w4)


def ransac_pnp(corr: CorrespondenceSet, K: CameraIntrinsics, cfg: Optional[RansacConfig] = None) -> PnPResult:
    """
    Best of N_R seeded 4-point EPnP hypotheses, ranked by (inlier count, -inlier RMS, -iteration).
    The winner is re-fit on its inliers and optionally refined by LM; inliers are recounted
    under the returned pose.
    """
    cfg = cfg or RansacConfig()
    n = len(corr)
    if n < 4:
        raise TooFewPoints(f"RANSAC needs at least 4 correspondences, got {n}")

    rng = np.random.default_rng(cfg.rng_seed)
    best_key = None
    best_pose: Optional[PoseSE3] = None
    rejected = 0
    scored = 0
    batch: List[Tuple[int, PoseSE3]] = []

    def score(batch):
        nonlocal best_key, best_pose
        Rs = np.array([p.rotation_matrix for _, p in batch])
        ts = np.array([p.translation for _, p in batch])
        errs = _batched_errors(Rs, ts, corr, K)
        inl = errs <= cfg.reproj_threshold
        counts = inl.sum(axis=1)
        sq = np.where(inl, errs, 0.0) ** 2
        with np.errstate(invalid="ignore", divide="ignore"):
            rms = np.where(counts > 0, np.sqrt(sq.sum(axis=1) / np.maximum(counts, 1)), np.inf)
        for (it, pose), c, r in zip(batch, counts, rms):
            key = (int(c), -float(r), -it)
            if best_key is None or key > best_key:
                best_key, best_pose = key, pose

    for it in range(cfg.iterations):
        sample = rng.choice(n, size=4, replace=False)
        if is_near_collinear(corr.points3d[sample]):
            rejected += 1
            continue
        try:
            batch.append((it, epnp(corr.subset(sample), K)))
        except GeometryError:
            rejected += 1
            continue
        if len(batch) == config.RANSAC_BATCH_SIZE:
            score(batch)
            scored += len(batch)
            batch = []
            if cfg.early_exit and best_key is not None:
                needed = _required_iterations(best_key[0] / n, cfg.confidence)
                if it + 1 >= needed:
                    logger.debug(f"[Ransac] early exit after {it + 1} iterations")
                    break
    if batch:
        score(batch)
        scored += len(batch)

    if best_pose is None or best_key[0] < cfg.min_inliers:
        count = 0 if best_key is None else best_key[0]
        raise NoConsensus(f"Best hypothesis has {count} inliers, need {cfg.min_inliers}")

    errors = reprojection_errors(best_pose, corr, K)
    inliers, rms = _inlier_stats(errors, cfg.reproj_threshold)
    pose = best_pose
    try:
        refit = epnp(corr.subset(inliers), K)
        refit_inliers, refit_rms = _inlier_stats(reprojection_errors(refit, corr, K), cfg.reproj_threshold)
        if (refit_inliers.size, -refit_rms) >= (inliers.size, -rms):
            pose, inliers, rms = refit, refit_inliers, refit_rms
    except GeometryError as e:
        logger.debug(f"[Ransac] inlier re-fit failed ({e}), keeping minimal hypothesis")

    if cfg.refine_with_lm:
        pose = lm_refine(pose, corr.subset(inliers), K)
        inliers, rms = _inlier_stats(reprojection_errors(pose, corr, K), cfg.reproj_threshold)

    if inliers.size < cfg.min_inliers:
        raise NoConsensus(f"Final pose keeps {inliers.size} inliers, need {cfg.min_inliers}")

    logger.debug(f"[Ransac] {scored} hypotheses scored ({rejected} samples rejected), "
                 f"{inliers.size}/{n} inliers, rms {rms:.3f} px")
    return PnPResult(pose=pose, inlier_indices=inliers, inlier_rms=rms, hypothesis_count=scored)


# ---------------------------------------------------------------------------
# Levenberg-Marquardt
# ---------------------------------------------------------------------------
def reprojection_jacobian(pose: PoseSE3, points3d: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """(n, 2, 6) derivative of the projection w.r.t. a left perturbation exp([rho, omega]) * pose."""
    P = pose.apply(points3d)
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    n = P.shape[0]
    dpi = np.zeros((n, 2, 3))
    dpi[:, 0, 0] = K.fx / z
    dpi[:, 0, 2] = -K.fx * x / z ** 2
    dpi[:, 1, 1] = K.fy / z
    dpi[:, 1, 2] = -K.fy * y / z ** 2
    dP = np.zeros((n, 3, 6))
    dP[:, :, :3] = np.eye(3)
    dP[:, :, 3:] = -np.array([hat(p) for p in P])
    return dpi @ dP


def _residuals(pose: PoseSE3, corr: CorrespondenceSet, K: CameraIntrinsics) -> Optional[np.ndarray]:
    P = pose.apply(corr.points3d)
    if np.any(P[:, 2] <= config.DEPTH_EPSILON):
        return None
    u = K.fx * P[:, 0] / P[:, 2] + K.cx
    v = K.fy * P[:, 1] / P[:, 2] + K.cy
    return np.stack([u, v], axis=1) - corr.pixels2d


def _cost(residuals: Optional[np.ndarray], weights: np.ndarray) -> float:
    if residuals is None:
        return math.inf
    return float(np.sum(weights * np.sum(residuals ** 2, axis=1)))


def lm_refine(pose: PoseSE3, corr: CorrespondenceSet, K: CameraIntrinsics,
              max_iter: int = config.LM_MAX_ITERATIONS) -> PoseSE3:
    """Minimizes the weighted squared reprojection error; never returns a costlier pose."""
    if len(corr) < 4:
        raise TooFewPoints(f"LM refinement needs at least 4 correspondences, got {len(corr)}")
    w = corr.weights
    res = _residuals(pose, corr, K)
    cost = _cost(res, w)
    if not math.isfinite(cost):
        logger.debug("[LM] input pose has points behind the camera, skipping")
        return pose

    lam = config.LM_INITIAL_DAMPING
    it = 0
    for it in range(max_iter):
        if cost == 0.0:
            break
        J = reprojection_jacobian(pose, corr.points3d, K)
        H = np.einsum("n,nki,nkj->ij", w, J, J)
        g = np.einsum("n,nki,nk->i", w, J, res)
        if np.max(np.abs(g)) < 1e-14:
            break

        accepted = False
        while lam <= config.LM_MAX_DAMPING:
            try:
                delta = np.linalg.solve(H + lam * np.diag(np.diag(H)), -g)
            except np.linalg.LinAlgError:
                lam *= config.LM_DAMPING_UP
                continue
            candidate = compose(se3_exp(delta), pose)
            cand_res = _residuals(candidate, corr, K)
            cand_cost = _cost(cand_res, w)
            if cand_cost < cost:
                rel = (cost - cand_cost) / cost
                pose, res, cost = candidate, cand_res, cand_cost
                lam *= config.LM_DAMPING_DOWN
                accepted = True
                break
            lam *= config.LM_DAMPING_UP

        if not accepted or rel < config.LM_RELATIVE_TOLERANCE:
            break

    logger.debug(f"[LM] stopped after {it + 1} iterations, cost {cost:.6g}")
    return pose
