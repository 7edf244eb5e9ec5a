import os
from pathlib import Path

# --- Base Paths ---
BASE_DIR = Path(__file__).resolve().parent
DATA_BASE_DIR = Path(os.environ.get("LIMATCH_DATA_DIR", BASE_DIR / "Data_log"))

# Persistent Settings File
SETTINGS_FILE_PATH = BASE_DIR / "user_settings.json"

# --- Geometry ---
# Behind-camera guard for projection (meters)
DEPTH_EPSILON = 1e-6
# Weights of the stacked [translation, rotation] log vector in se3_log_norm
LOG_NORM_TRANSLATION_WEIGHT = 1.0
LOG_NORM_ROTATION_WEIGHT = 1.0

# --- Projection ---
MAX_DEPTH = 160.0
OCCLUSION_KERNEL = 9
OCCLUSION_THRESHOLD = 3.0
# Which side of the cosine-sum threshold counts as visible
OCCLUSION_DIRECTION = "visible_if_greater"
FOURIER_FREQUENCIES = 12
MAX_ROLL_AUGMENTATION_DEG = 5.0

# --- Oracle Matcher ---
ORACLE_MIN_INLIER_SIGMA = 0.1

# --- RANSAC / LM ---
RANSAC_ITERATIONS = 1000
RANSAC_REPROJ_THRESHOLD = 2.0
RANSAC_MIN_INLIERS = 6
RANSAC_CONFIDENCE = 0.999
RANSAC_BATCH_SIZE = 64
COLLINEAR_MAX_ANGLE_DEG = 1.0

LM_INITIAL_DAMPING = 1e-3
LM_DAMPING_UP = 10.0
LM_DAMPING_DOWN = 0.1
LM_MAX_ITERATIONS = 50
LM_RELATIVE_TOLERANCE = 1e-10
LM_MAX_DAMPING = 1e12

# --- Pipeline ---
# (max_translation [m], max_rotation [deg]) per refinement stage
STAGE_NOISE_RANGES = [
    (2.0, 10.0),
    (0.2, 0.5),
    (0.05, 0.1),
]
SUCCESS_TRANSLATION_ERROR = 0.1

# --- Temporal Aggregation ---
MODE_TRANSLATION_DECIMALS = 2
MODE_ROTATION_DECIMALS = 4

# --- Map Building ---
VOXEL_SIZE = 0.1
COLORIZE_DEPTH_TOLERANCE = 0.2

# --- Default Run Settings ---
DEFAULT_RUN_SETTINGS = {
    "max_depth": MAX_DEPTH,
    "occlusion_enabled": False,
    "occlusion_kernel": OCCLUSION_KERNEL,
    "occlusion_threshold": OCCLUSION_THRESHOLD,
    "occlusion_direction": OCCLUSION_DIRECTION,
    "ransac_iterations": RANSAC_ITERATIONS,
    "reproj_threshold": RANSAC_REPROJ_THRESHOLD,
    "min_inliers": RANSAC_MIN_INLIERS,
    "workers": 1,
}
