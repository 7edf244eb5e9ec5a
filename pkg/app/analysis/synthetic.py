"""
Synthetic street scene used as map and ground truth when no dataset is given.

World frame follows the robot convention (X forward along the street, Y left, Z up):
two building facades at y = +/-8 m and the ground plane, spanning x in [5, 80] m.
The camera stands at the origin, 1.5 m above ground, looking down the street.
"""
import numpy as np

from app.analysis.geometry import ROBOT_TO_CAMERA, CameraIntrinsics, PointCloud, PoseSE3, compose
from app.core.structures import Scene

STREET_HALF_WIDTH = 8.0
STREET_NEAR, STREET_FAR = 5.0, 80.0
FACADE_HEIGHT = 12.0
CAMERA_HEIGHT = 1.5


def street_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=480.0, cy=160.0, width=960, height=320)


def street_camera_pose() -> PoseSE3:
    """Map -> camera pose of the street camera."""
    lift = PoseSE3([1.0, 0.0, 0.0, 0.0], [0.0, 0.0, -CAMERA_HEIGHT])
    return compose(ROBOT_TO_CAMERA, lift)


def street_scene(n_points: int = 10000, seed: int = 0) -> Scene:
    rng = np.random.default_rng(seed)
    n_ground = int(0.4 * n_points)
    n_left = (n_points - n_ground) // 2
    n_right = n_points - n_ground - n_left

    ground = np.column_stack([
        rng.uniform(STREET_NEAR, STREET_FAR, n_ground),
        rng.uniform(-STREET_HALF_WIDTH, STREET_HALF_WIDTH, n_ground),
        np.zeros(n_ground),
    ])
    facades = []
    for count, side in ((n_left, STREET_HALF_WIDTH), (n_right, -STREET_HALF_WIDTH)):
        facades.append(np.column_stack([
            rng.uniform(STREET_NEAR, STREET_FAR, count),
            np.full(count, side),
            rng.uniform(0.0, FACADE_HEIGHT, count),
        ]))
    points = np.vstack([ground] + facades)
    intensity = rng.uniform(0.0, 1.0, n_points)
    return Scene(PointCloud(points, intensity), street_camera_pose(), street_intrinsics())
