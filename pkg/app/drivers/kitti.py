"""
KITTI-style dataset files: velodyne scans, semantic labels, odometry trajectories,
intrinsics JSON and camera images.
"""
import json
import logging
import os
from typing import Tuple, Union

import numpy as np
from PIL import Image
from pydantic import ValidationError

from app.analysis.geometry import CameraIntrinsics, PointCloud, PoseSE3
from app.core.errors import IoFailure, MalformedFile, MalformedScan
from app.core.structures import TrajectoryFile
from app.models.schemas import IntrinsicsFile

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

SCAN_DTYPE = np.dtype("<f4")
SCAN_RECORD_BYTES = 4 * SCAN_DTYPE.itemsize
# Trajectory files carry ~9 significant digits
ROTATION_TOLERANCE = 1e-4


def _require_file(path: PathLike, what: str):
    if not os.path.isfile(path):
        raise IoFailure(f"{what} not found: {path}")


def load_scan(path: PathLike) -> PointCloud:
    """Little-endian float32 (x, y, z, intensity) records."""
    _require_file(path, "Scan file")
    size = os.path.getsize(path)
    if size % SCAN_RECORD_BYTES != 0:
        raise MalformedScan(f"{path}: {size} bytes is not a multiple of {SCAN_RECORD_BYTES}")
    try:
        raw = np.fromfile(path, dtype=SCAN_DTYPE).reshape(-1, 4)
    except OSError as e:
        raise IoFailure(f"Cannot read scan {path}: {e}") from e
    try:
        return PointCloud(raw[:, :3].astype(np.float64), raw[:, 3].astype(np.float64))
    except ValueError as e:
        raise MalformedScan(f"{path}: {e}") from e


def save_scan(cloud: PointCloud, path: PathLike):
    intensity = np.zeros(len(cloud)) if cloud.intensity is None else cloud.intensity
    records = np.column_stack([cloud.points, intensity]).astype(SCAN_DTYPE)
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        records.tofile(path)
    except OSError as e:
        raise IoFailure(f"Cannot write scan {path}: {e}") from e


def load_labels(path: PathLike) -> np.ndarray:
    """SemanticKITTI .label: uint32 per point, semantic class in the lower 16 bits."""
    _require_file(path, "Label file")
    size = os.path.getsize(path)
    if size % 4 != 0:
        raise MalformedFile(f"{path}: {size} bytes is not a multiple of 4")
    return (np.fromfile(path, dtype="<u4") & 0xFFFF).astype(np.int64)


def load_trajectory(path: PathLike) -> TrajectoryFile:
    """
    One pose per line: 12 reals (row-major 3x4 sensor -> map), optionally preceded by a timestamp.
    Without timestamps the line number is used.
    """
    _require_file(path, "Trajectory file")
    stamps, poses = [], []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values = [float(x) for x in line.split()]
            except ValueError as e:
                raise MalformedFile(f"{path}:{lineno}: {e}") from e
            if len(values) == 12:
                stamp, flat = float(len(poses)), values
            elif len(values) == 13:
                stamp, flat = values[0], values[1:]
            else:
                raise MalformedFile(f"{path}:{lineno}: expected 12 or 13 values, got {len(values)}")
            m = np.eye(4)
            m[:3, :] = np.array(flat).reshape(3, 4)
            R = m[:3, :3]
            if (np.max(np.abs(R @ R.T - np.eye(3))) > ROTATION_TOLERANCE
                    or np.linalg.det(R) <= 0):
                raise MalformedFile(f"{path}:{lineno}: 3x3 block is not a rotation")
            try:
                poses.append(PoseSE3.from_matrix(m))
            except ValueError as e:
                raise MalformedFile(f"{path}:{lineno}: invalid rotation ({e})") from e
            stamps.append(stamp)

    stamps = np.array(stamps)
    if stamps.size > 1 and np.any(np.diff(stamps) <= 0):
        raise MalformedFile(f"{path}: timestamps are not strictly increasing")
    logger.debug(f"[Trajectory] {len(poses)} poses from {path}")
    return TrajectoryFile(stamps, poses)


def save_trajectory(trajectory: TrajectoryFile, path: PathLike, with_timestamps: bool = True):
    try:
        with open(path, "w") as f:
            for stamp, pose in trajectory:
                row = " ".join(f"{v:.17g}" for v in pose.matrix[:3, :].reshape(-1))
                f.write(f"{stamp:.17g} {row}\n" if with_timestamps else f"{row}\n")
    except OSError as e:
        raise IoFailure(f"Cannot write trajectory {path}: {e}") from e


def load_intrinsics(path: PathLike) -> Tuple[CameraIntrinsics, str]:
    """JSON {fx, fy, cx, cy, width, height, frame}; returns the intrinsics and the frame tag."""
    _require_file(path, "Intrinsics file")
    try:
        with open(path, "r") as f:
            doc = IntrinsicsFile.model_validate(json.load(f))
        return doc.to_intrinsics(), doc.frame
    except (json.JSONDecodeError, ValidationError, ValueError) as e:
        raise MalformedFile(f"{path}: {e}") from e


def save_intrinsics(K: CameraIntrinsics, path: PathLike, frame: str = "pinhole-z-forward"):
    doc = IntrinsicsFile(fx=K.fx, fy=K.fy, cx=K.cx, cy=K.cy, width=K.width, height=K.height, frame=frame)
    try:
        with open(path, "w") as f:
            f.write(doc.model_dump_json(indent=4))
    except OSError as e:
        raise IoFailure(f"Cannot write intrinsics {path}: {e}") from e


def load_image(path: PathLike) -> np.ndarray:
    """(H, W, 3) uint8 RGB."""
    _require_file(path, "Image file")
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except OSError as e:
        raise IoFailure(f"Cannot read image {path}: {e}") from e
