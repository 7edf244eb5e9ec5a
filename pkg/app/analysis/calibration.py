"""
Calibration quality metrics and temporal aggregation of per-frame extrinsic estimates.
"""
import logging
from typing import List, Sequence, Tuple

import numpy as np

import config
from app.analysis.geometry import PoseSE3, canonical_quaternion, se3_log_norm
from app.core.errors import DimensionMismatch, ZeroInitialError
from app.core.structures import AggregationResult

logger = logging.getLogger(__name__)

PosePair = Tuple[PoseSE3, PoseSE3]


def msee_mrr_from_errors(initial: Sequence[float], final: Sequence[float]) -> Tuple[float, float]:
    """
    MSEE = mean(E_i), MRR = mean(|(eta_i - E_i) / eta_i|).
    The absolute value is kept: overshooting to E_i = 2 eta_i scores like a perfect result.
    """
    eta = np.asarray(initial, dtype=np.float64)
    err = np.asarray(final, dtype=np.float64)
    if eta.shape != err.shape or eta.size == 0:
        raise DimensionMismatch(f"Need equal-length nonempty error arrays, got {eta.shape} and {err.shape}")
    if np.any(eta == 0):
        raise ZeroInitialError(f"{int(np.sum(eta == 0))} initial errors are zero")
    msee = float(np.mean(err))
    mrr = float(np.mean(np.abs((eta - err) / eta)))
    return msee, mrr


def msee_mrr(initial_pairs: Sequence[PosePair], final_pairs: Sequence[PosePair]) -> Tuple[float, float]:
    """Same metrics from (ground truth, estimate) pose pairs via the SE(3) log-norm."""
    if len(initial_pairs) != len(final_pairs):
        raise DimensionMismatch(f"{len(initial_pairs)} initial vs {len(final_pairs)} final pairs")
    eta = [se3_log_norm(gt, est) for gt, est in initial_pairs]
    err = [se3_log_norm(gt, est) for gt, est in final_pairs]
    return msee_mrr_from_errors(eta, err)


def _mean_quaternion(quats: np.ndarray) -> np.ndarray:
    """Principal eigenvector of (1/n) sum q q^T; insensitive to the sign of each q."""
    M = quats.T @ quats / quats.shape[0]
    _, evecs = np.linalg.eigh(M)
    return canonical_quaternion(evecs[:, -1])


def _mode_1d(values: np.ndarray) -> float:
    """Most frequent value; ties go to the value seen first."""
    uniq, first, counts = np.unique(values, return_index=True, return_counts=True)
    best = np.lexsort((first, -counts))[0]
    return float(uniq[best])


def _mode_rows(rows: np.ndarray) -> np.ndarray:
    uniq, first, counts = np.unique(rows, axis=0, return_index=True, return_counts=True)
    best = np.lexsort((first, -counts))[0]
    return uniq[best]


def aggregate_extrinsics(poses: Sequence[PoseSE3]) -> AggregationResult:
    if len(poses) == 0:
        raise DimensionMismatch("Cannot aggregate an empty pose list")
    quats = np.array([p.rotation for p in poses])
    trans = np.array([p.translation for p in poses])

    mean_pose = PoseSE3(_mean_quaternion(quats), trans.mean(axis=0))
    median_t = np.median(trans, axis=0)

    t_round = np.round(trans, config.MODE_TRANSLATION_DECIMALS)
    q_round = np.round(quats, config.MODE_ROTATION_DECIMALS)
    mode_t = np.array([_mode_1d(t_round[:, k]) for k in range(3)])
    mode_q = np.array([_mode_1d(q_round[:, k]) for k in range(4)])
    quantum = 10.0 ** -config.MODE_ROTATION_DECIMALS
    norm = np.linalg.norm(mode_q)
    if norm == 0 or np.max(np.abs(mode_q / norm - mode_q)) > quantum:
        logger.debug("[Aggregate] component-wise quaternion mode is not a rotation, using tuple mode")
        mode_q = _mode_rows(q_round)
    mode_pose = PoseSE3(mode_q, mode_t)

    return AggregationResult(mean_pose=mean_pose, mode_pose=mode_pose,
                             median_translation=median_t, frame_count=len(poses))


def aggregate_windows(poses: Sequence[PoseSE3], window: int) -> List[AggregationResult]:
    """Aggregation over consecutive, non-overlapping windows; an incomplete tail window is dropped."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if len(poses) < window:
        return [aggregate_extrinsics(poses)] if poses else []
    return [aggregate_extrinsics(poses[i:i + window])
            for i in range(0, len(poses) - window + 1, window)]
