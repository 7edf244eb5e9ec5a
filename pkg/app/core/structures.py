from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from app.analysis.geometry import CameraIntrinsics, PointCloud, PoseSE3

# Empty-pixel marker of LidarImage.source_index (0xFFFFFFFF once serialized)
EMPTY_INDEX = -1


@dataclass(frozen=True, eq=False)
class LidarImage:
    """
    Sparse depth image rendered from a map at a candidate pose.

    depth:        (H, W) meters, 0 where empty
    source_index: (H, W) int64 map point index, EMPTY_INDEX where empty
    uv:           (H, W, 2) continuous projection of the stored point, NaN where empty
    """
    depth: np.ndarray
    source_index: np.ndarray
    uv: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.depth > 0

    @property
    def shape(self) -> Tuple[int, int]:
        return self.depth.shape

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.mask))

    def visible_indices(self) -> np.ndarray:
        """Sorted map indices of every stored point."""
        return np.sort(self.source_index[self.mask])

    def cleared(self, drop: np.ndarray) -> "LidarImage":
        """Copy with the pixels flagged in `drop` emptied."""
        depth = self.depth.copy()
        index = self.source_index.copy()
        uv = self.uv.copy()
        depth[drop] = 0.0
        index[drop] = EMPTY_INDEX
        uv[drop] = np.nan
        return LidarImage(depth, index, uv)


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement (du, dv) in pixels with uncertainties and validity."""
    du: np.ndarray
    dv: np.ndarray
    sigma_u: np.ndarray
    sigma_v: np.ndarray
    valid: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.valid.shape

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))

    @classmethod
    def empty(cls, shape: Tuple[int, int]) -> "FlowField":
        return cls(np.zeros(shape), np.zeros(shape), np.ones(shape), np.ones(shape),
                   np.zeros(shape, dtype=bool))


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    points3d: np.ndarray
    pixels2d: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points3d, dtype=np.float64).reshape(-1, 3)
        pix = np.asarray(self.pixels2d, dtype=np.float64).reshape(-1, 2)
        if self.weights is None:
            w = np.ones(pts.shape[0])
        else:
            w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if not (pts.shape[0] == pix.shape[0] == w.shape[0]):
            raise ValueError(f"Correspondence arrays differ in length: {pts.shape[0]}, {pix.shape[0]}, {w.shape[0]}")
        if w.size and np.min(w) <= 0:
            raise ValueError("Correspondence weights must be positive")
        object.__setattr__(self, "points3d", pts)
        object.__setattr__(self, "pixels2d", pix)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.points3d.shape[0]

    def subset(self, indices) -> "CorrespondenceSet":
        idx = np.asarray(indices)
        return CorrespondenceSet(self.points3d[idx], self.pixels2d[idx], self.weights[idx])


@dataclass(frozen=True, eq=False)
class PnPResult:
    pose: PoseSE3
    inlier_indices: np.ndarray
    inlier_rms: float
    hypothesis_count: int

    @property
    def inlier_count(self) -> int:
        return int(self.inlier_indices.size)


@dataclass
class StageOutcome:
    """Result of one refinement stage; `result` is None when the stage failed."""
    stage: int
    input_pose: PoseSE3
    output_pose: PoseSE3
    result: Optional[PnPResult] = None
    failure: Optional[str] = None
    runtime_ms: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.failure is None


@dataclass(frozen=True, eq=False)
class AggregationResult:
    mean_pose: PoseSE3
    mode_pose: PoseSE3
    median_translation: np.ndarray
    frame_count: int


@dataclass
class BenchmarkRecord:
    """One report line: a frame (seed) after one stage."""
    seed: int
    stage: int
    E_t: Optional[float]
    E_r: Optional[float]
    inliers: int = 0
    runtime_ms: Optional[float] = None
    failure: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "stage": self.stage,
            "E_t": self.E_t,
            "E_r": self.E_r,
            "inliers": self.inliers,
            "runtime_ms": self.runtime_ms,
            "failure": self.failure,
        }


@dataclass
class BenchmarkStatus:
    """Data model representing the current state of a seed sweep."""
    is_running: bool = False
    current_seed: int = 0
    completed: int = 0
    total: int = 0
    run_id: str = ""
    message: str = "IDLE"
    summary: Optional[Dict[str, Any]] = None
    errors: List[str] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class TrajectoryFile:
    """Timestamped sensor -> map poses, timestamps strictly increasing."""
    timestamps: np.ndarray
    poses: List[PoseSE3]

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.timestamps, self.poses))


@dataclass
class CalibrationRun:
    frame: int
    seed: int
    initial_pose: PoseSE3
    outcomes: List[StageOutcome]

    @property
    def final_pose(self) -> PoseSE3:
        return self.outcomes[-1].output_pose if self.outcomes else self.initial_pose


@dataclass
class CalibrationResult:
    runs: List[CalibrationRun]
    aggregation: AggregationResult
    msee: float
    mrr: float


@dataclass(frozen=True, eq=False)
class Scene:
    """Map, ground-truth map -> camera pose and intrinsics of one localization problem."""
    cloud: PointCloud
    gt_pose: PoseSE3
    K: CameraIntrinsics
