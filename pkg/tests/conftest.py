import numpy as np
import pytest

from app.analysis.geometry import CameraIntrinsics, PoseSE3
from app.analysis.synthetic import street_scene
from app.models.schemas import RansacConfig, RunConfig, default_stages


@pytest.fixture(scope="session")
def street():
    """Full-size synthetic street: 10k points, depths 5-80 m."""
    return street_scene(10000, seed=0)


@pytest.fixture(scope="session")
def small_street():
    return street_scene(3000, seed=1)


@pytest.fixture
def K_small():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=40.0, width=100, height=80)


@pytest.fixture
def quick_run():
    """RunConfig factory: noiseless default stages with short, early-exiting RANSAC."""

    def make(iterations: int = 200, **overrides) -> RunConfig:
        stages = [s.model_copy(update={"ransac": RansacConfig(iterations=iterations, early_exit=True)})
                  for s in default_stages()]
        data = {"stages": stages, "synthetic_points": 3000}
        data.update(overrides)
        return RunConfig(**data)

    return make


@pytest.fixture
def random_pose():
    def make(rng: np.random.Generator, max_angle: float = np.pi, max_shift: float = 2.0) -> PoseSE3:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(0.0, max_angle)
        return PoseSE3.from_rotvec(axis * angle, rng.uniform(-max_shift, max_shift, 3))

    return make
