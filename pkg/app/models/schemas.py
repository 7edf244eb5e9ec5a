from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

import config
from app.analysis.geometry import CameraIntrinsics


def odd_kernel(v: int) -> int:
    if v % 2 == 0:
        raise ValueError(f"kernel_size must be odd, got {v}")
    return v


class OcclusionConfig(BaseModel):
    """Four-sector visibility filter: K x K window, cosine-sum threshold."""
    kernel_size: int = Field(config.OCCLUSION_KERNEL, ge=3)
    threshold: float = Field(config.OCCLUSION_THRESHOLD, ge=-4.0, le=4.0)
    direction: Literal["visible_if_greater", "visible_if_smaller"] = Field(config.OCCLUSION_DIRECTION)

    @field_validator("kernel_size")
    @classmethod
    def _odd_kernel(cls, v: int) -> int:
        return odd_kernel(v)


class ProjectionConfig(BaseModel):
    max_depth: float = Field(config.MAX_DEPTH, gt=0)
    occlusion: Optional[OcclusionConfig] = None


class OracleNoiseConfig(BaseModel):
    gaussian_sigma: float = Field(0.0, ge=0)
    outlier_fraction: float = Field(0.0, ge=0, le=1)
    outlier_range: float = Field(50.0, gt=0)
    rng_seed: int = 0
    # All sigmas 1.0: no uncertainty information reaches the filter
    blind: bool = False


class MatcherConfig(BaseModel):
    kind: Literal["oracle", "external"] = "oracle"
    oracle: OracleNoiseConfig = Field(default_factory=OracleNoiseConfig)
    flow_path: Optional[str] = None

    @model_validator(mode="after")
    def _external_needs_file(self):
        if self.kind == "external" and not self.flow_path:
            raise ValueError("matcher.kind 'external' requires matcher.flow_path")
        return self


class RansacConfig(BaseModel):
    iterations: int = Field(config.RANSAC_ITERATIONS, ge=1)
    reproj_threshold: float = Field(config.RANSAC_REPROJ_THRESHOLD, gt=0)
    min_inliers: int = Field(config.RANSAC_MIN_INLIERS, ge=4)
    rng_seed: int = 0
    refine_with_lm: bool = False
    early_exit: bool = False
    confidence: float = Field(config.RANSAC_CONFIDENCE, gt=0, lt=1)


class NoiseRange(BaseModel):
    max_translation: float = Field(..., ge=0)
    max_rotation: float = Field(..., ge=0)

    def dominates(self, other: "NoiseRange") -> bool:
        return self.max_translation >= other.max_translation and self.max_rotation >= other.max_rotation


class StageConfig(BaseModel):
    noise_range: NoiseRange
    matcher: MatcherConfig = Field(default_factory=MatcherConfig)
    ransac: RansacConfig = Field(default_factory=RansacConfig)
    keep_quantile: float = Field(1.0, gt=0, le=1)


class VoxelGridConfig(BaseModel):
    voxel_size: float = Field(config.VOXEL_SIZE, gt=0)


def default_stages() -> List[StageConfig]:
    """Three refinement stages with the configured noise ranges and a noiseless oracle."""
    return [
        StageConfig(noise_range=NoiseRange(max_translation=t, max_rotation=r))
        for t, r in config.STAGE_NOISE_RANGES
    ]


def check_stage_order(stages: List[StageConfig]) -> List[StageConfig]:
    if not stages:
        raise ValueError("At least one stage is required")
    for prev, nxt in zip(stages, stages[1:]):
        if not prev.noise_range.dominates(nxt.noise_range):
            raise ValueError("Stages must be ordered by non-increasing noise range")
    return stages


class RunConfig(BaseModel):
    """
    Run description shared by the CLI (--config) and the service.
    Without map_path the synthetic street scene is used as map and ground truth.
    """
    stages: List[StageConfig] = Field(default_factory=default_stages)
    projection: ProjectionConfig = Field(default_factory=ProjectionConfig)
    intrinsics_path: Optional[str] = None
    map_path: Optional[str] = None
    trajectory_path: Optional[str] = None
    frame: int = Field(0, ge=0)
    seeds: List[int] = Field(default_factory=lambda: [0])
    initial_noise: Optional[NoiseRange] = None
    output_path: Optional[str] = None
    report_timing: bool = False
    synthetic_points: int = Field(10000, ge=10)
    workers: int = Field(1, ge=1)

    @field_validator("stages")
    @classmethod
    def _ordered(cls, v: List[StageConfig]) -> List[StageConfig]:
        return check_stage_order(v)

    @field_validator("intrinsics_path", "map_path", "trajectory_path", "output_path")
    @classmethod
    def _well_formed(cls, v: Optional[str]) -> Optional[str]:
        if v is not None and (not v.strip() or "\x00" in v):
            raise ValueError(f"Malformed path: {v!r}")
        return v

    @field_validator("seeds")
    @classmethod
    def _some_seeds(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("seeds must not be empty")
        return v

    @property
    def initial_range(self) -> NoiseRange:
        return self.initial_noise or self.stages[0].noise_range


class IntrinsicsFile(BaseModel):
    fx: float = Field(..., gt=0)
    fy: float = Field(..., gt=0)
    cx: float
    cy: float
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)
    frame: Literal["pinhole-z-forward", "robot-x-forward"] = "pinhole-z-forward"

    def to_intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)


# --- Service models ---
class RunSettings(BaseModel):
    """Persisted user defaults (user_settings.json)."""
    max_depth: float = Field(config.MAX_DEPTH, gt=0)
    occlusion_enabled: bool = False
    occlusion_kernel: int = Field(config.OCCLUSION_KERNEL, ge=3)
    occlusion_threshold: float = Field(config.OCCLUSION_THRESHOLD, ge=-4.0, le=4.0)
    occlusion_direction: Literal["visible_if_greater", "visible_if_smaller"] = config.OCCLUSION_DIRECTION
    ransac_iterations: int = Field(config.RANSAC_ITERATIONS, ge=1)
    reproj_threshold: float = Field(config.RANSAC_REPROJ_THRESHOLD, gt=0)
    min_inliers: int = Field(config.RANSAC_MIN_INLIERS, ge=4)
    workers: int = Field(1, ge=1)

    @field_validator("occlusion_kernel")
    @classmethod
    def _odd_kernel(cls, v: int) -> int:
        return odd_kernel(v)


class LocalizeRequest(BaseModel):
    run: Optional[RunConfig] = None
    seed: int = 0


class BenchmarkRequest(BaseModel):
    run: Optional[RunConfig] = None


class ApiResponse(BaseModel):
    status: str
    message: str
    data: Optional[Dict[str, Any]] = None
