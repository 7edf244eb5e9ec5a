"""
SE(3) / quaternion algebra and pinhole projection primitives.

Conventions:
    - Quaternions are stored as (w, x, y, z), unit norm, canonical sign (w >= 0;
      when w == 0 the first nonzero of x, y, z is positive).
    - A PoseSE3 maps points of its source frame into its target frame:
      p_target = R * p_source + t. The poses used for rendering map map-frame points
      into the camera frame.
    - The camera frame is the pinhole convention: Z forward, X right, Y down.
      The robot convention (X forward, Y left, Z up) is converted at ingestion
      with ROBOT_TO_CAMERA.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

import config
from app.core.errors import NonPositiveDepth


# ---------------------------------------------------------------------------
# Quaternion helpers
# ---------------------------------------------------------------------------
def canonical_quaternion(q) -> np.ndarray:
    """Normalize a (w, x, y, z) quaternion and enforce the canonical sign."""
    q = np.asarray(q, dtype=np.float64).reshape(4)
    norm = np.linalg.norm(q)
    if not np.isfinite(norm) or norm < 1e-12:
        raise ValueError(f"Invalid quaternion: {q}")
    q = q / norm
    if q[0] < 0.0:
        q = -q
    elif q[0] == 0.0:
        nonzero = np.flatnonzero(q[1:])
        if nonzero.size and q[1 + nonzero[0]] < 0.0:
            q = -q
    return q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b (rotation b applied first)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix so that hat(v) @ p == cross(v, p)."""
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def _to_scipy(q: np.ndarray) -> Rotation:
    return Rotation.from_quat([q[1], q[2], q[3], q[0]])


def _from_scipy(rot: Rotation) -> np.ndarray:
    x, y, z, w = rot.as_quat()
    return np.array([w, x, y, z])


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid transform: unit quaternion (w, x, y, z) + translation in meters."""
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = canonical_quaternion(self.rotation)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError(f"Non-finite translation: {t}")
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "PoseSE3":
        m = np.asarray(matrix, dtype=np.float64)
        return cls(_from_scipy(Rotation.from_matrix(m[:3, :3])), m[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "PoseSE3":
        return cls(_from_scipy(Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64))), translation)

    @classmethod
    def from_euler(cls, seq: str, angles, translation=(0.0, 0.0, 0.0), degrees: bool = True) -> "PoseSE3":
        return cls(_from_scipy(Rotation.from_euler(seq, angles, degrees=degrees)), translation)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return _to_scipy(self.rotation).as_matrix()

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "PoseSE3":
        q_inv = quat_conjugate(self.rotation)
        r_inv = self.rotation_matrix.T
        return PoseSE3(q_inv, -r_inv @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array (or a single 3-vector)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation_matrix.T + self.translation

    def __matmul__(self, other: "PoseSE3") -> "PoseSE3":
        return compose(self, other)

    def __repr__(self) -> str:
        q = np.array2string(self.rotation, precision=6)
        t = np.array2string(self.translation, precision=4)
        return f"PoseSE3(q={q}, t={t})"


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics K plus image extent, all in pixels."""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"Focal lengths must be positive (fx={self.fx}, fy={self.fy})")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"Image extent must be positive ({self.width}x{self.height})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"Principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.height), int(self.width))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """
    Map or scan points (N, 3) in meters with optional attributes.

    intensity: (N,) in [0, 1]
    colors:    (N, 3) uint8
    color_mask: (N,) bool, which colors are set (None: all of them)
    """
    points: np.ndarray
    intensity: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None
    color_mask: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            pts = pts.reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("Point coordinates must be finite")
        n = pts.shape[0]
        object.__setattr__(self, "points", pts)

        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if inten.shape[0] != n:
                raise ValueError(f"Intensity length {inten.shape[0]} != {n} points")
            if inten.size and (np.nanmin(inten) < 0.0 or np.nanmax(inten) > 1.0):
                raise ValueError("Intensity must lie in [0, 1]")
            object.__setattr__(self, "intensity", inten)

        if self.colors is not None:
            colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if colors.shape[0] != n:
                raise ValueError(f"Color length {colors.shape[0]} != {n} points")
            object.__setattr__(self, "colors", colors)
            if self.color_mask is not None:
                mask = np.asarray(self.color_mask, dtype=bool).reshape(-1)
                if mask.shape[0] != n:
                    raise ValueError(f"Color mask length {mask.shape[0]} != {n} points")
                object.__setattr__(self, "color_mask", mask)
        elif self.color_mask is not None:
            raise ValueError("color_mask given without colors")

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, indices) -> "PointCloud":
        idx = np.asarray(indices)
        return PointCloud(
            self.points[idx],
            None if self.intensity is None else self.intensity[idx],
            None if self.colors is None else self.colors[idx],
            None if self.color_mask is None else self.color_mask[idx],
        )

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.intensity, self.colors, self.color_mask)


# Fixed robot (X fwd, Y left, Z up) -> pinhole camera (Z fwd, X right, Y down)
ROBOT_TO_CAMERA = PoseSE3.from_matrix(np.array([
    [0.0, -1.0, 0.0, 0.0],
    [0.0, 0.0, -1.0, 0.0],
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
]))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------
def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """a * b: applies b first, then a."""
    q = quat_multiply(a.rotation, b.rotation)
    t = a.rotation_matrix @ b.translation + a.translation
    return PoseSE3(q, t)


def transform_points(pose: PoseSE3, cloud: PointCloud) -> PointCloud:
    return cloud.with_points(pose.apply(cloud.points))


def robot_to_camera(cloud: PointCloud) -> PointCloud:
    return transform_points(ROBOT_TO_CAMERA, cloud)


def camera_to_robot(cloud: PointCloud) -> PointCloud:
    return transform_points(ROBOT_TO_CAMERA.inverse(), cloud)


def project_point(K: CameraIntrinsics, p_cam) -> Tuple[float, float, float]:
    x, y, z = np.asarray(p_cam, dtype=np.float64).reshape(3)
    if z <= config.DEPTH_EPSILON:
        raise NonPositiveDepth(f"Point depth {z} <= {config.DEPTH_EPSILON}")
    return K.fx * x / z + K.cx, K.fy * y / z + K.cy, z


def project_points(K: CameraIntrinsics, pts_cam: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Vectorized projection of camera-frame points.
    Returns (uv (N, 2), depth (N,), in_front (N,) bool); uv is NaN where not in front.
    """
    pts = np.asarray(pts_cam, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    in_front = z > config.DEPTH_EPSILON
    safe_z = np.where(in_front, z, 1.0)
    uv = np.empty((pts.shape[0], 2))
    uv[:, 0] = K.fx * pts[:, 0] / safe_z + K.cx
    uv[:, 1] = K.fy * pts[:, 1] / safe_z + K.cy
    uv[~in_front] = np.nan
    return uv, z, in_front


def unproject_pixel(K: CameraIntrinsics, u: float, v: float, depth: float) -> np.ndarray:
    if depth <= config.DEPTH_EPSILON:
        raise NonPositiveDepth(f"Depth {depth} <= {config.DEPTH_EPSILON}")
    return np.array([(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth])


def _so3_left_jacobian(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    W = hat(omega)
    if theta < 1e-8:
        return np.eye(3) + 0.5 * W + W @ W / 6.0
    return (np.eye(3)
            + W * (1.0 - np.cos(theta)) / theta ** 2
            + W @ W * (theta - np.sin(theta)) / theta ** 3)


def _so3_left_jacobian_inverse(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    W = hat(omega)
    if theta < 1e-8:
        return np.eye(3) - 0.5 * W + W @ W / 12.0
    coef = 1.0 / theta ** 2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * W + coef * (W @ W)


def se3_exp(xi) -> PoseSE3:
    """Exponential map of the stacked tangent vector [rho (m), omega (rad)]."""
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    rho, omega = xi[:3], xi[3:]
    return PoseSE3(_from_scipy(Rotation.from_rotvec(omega)), _so3_left_jacobian(omega) @ rho)


def se3_log(pose: PoseSE3) -> np.ndarray:
    """Logarithm map, returned as [rho (m), omega (rad)]."""
    omega = _to_scipy(pose.rotation).as_rotvec()
    rho = _so3_left_jacobian_inverse(omega) @ pose.translation
    return np.concatenate([rho, omega])


def se3_log_norm(a: PoseSE3, b: PoseSE3,
                 translation_weight: float = config.LOG_NORM_TRANSLATION_WEIGHT,
                 rotation_weight: float = config.LOG_NORM_ROTATION_WEIGHT) -> float:
    """Left-invariant distance ||log(a^-1 * b)|| over the stacked 6-vector."""
    xi = se3_log(compose(a.inverse(), b))
    xi[:3] *= translation_weight
    xi[3:] *= rotation_weight
    return float(np.linalg.norm(xi))


def pose_errors(gt: PoseSE3, pred: PoseSE3) -> Tuple[float, float]:
    """Translation error (m) and full geodesic rotation error (deg)."""
    e_t = float(np.linalg.norm(gt.translation - pred.translation))
    m = canonical_quaternion(quat_multiply(gt.rotation, quat_conjugate(pred.rotation)))
    e_r = 2.0 * np.degrees(np.arctan2(np.linalg.norm(m[1:]), m[0]))
    return e_t, float(e_r)
