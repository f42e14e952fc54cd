from pathlib import Path
import os

# =============================================================================
# INFRASTRUCTURE: FILESYSTEM RESOLUTION
# =============================================================================

# Root directory discovery: Locates the repository base folder
PROJ_ROOT: Path = Path(__file__).resolve().parent.parent

# Stage artifacts (models, paths, selections, metrics, reports)
ARTIFACTS_DIR: Path = Path(os.getenv("SLDD_ARTIFACTS_PATH", PROJ_ROOT / "artifacts"))

# Configuration documents
CONFIG_DIR: Path = PROJ_ROOT / "config"
DEFAULT_CONFIG_PATH: Path = CONFIG_DIR / "sldd.yaml"

# =============================================================================
# ARTIFACT NAMING
# =============================================================================

# Dataset bundle (written by `gen`)
TRAIN_MAPS_NAME: str = "train_maps.fmp"
TEST_MAPS_NAME: str = "test_maps.fmp"
TRAIN_LABELS_NAME: str = "train_labels.json"
TEST_LABELS_NAME: str = "test_labels.json"
ATTRIBUTES_NAME: str = "attributes.csv"
GROUND_TRUTH_NAME: str = "ground_truth.json"

# Per-seed stage artifacts
DENSE_MODEL_NAME: str = "dense_model.json"
DENSE_EXTRACTOR_NAME: str = "dense_extractor.joblib"
DENSE_CURVES_NAME: str = "dense_curves.csv"
TRAIN_FEATURES_NAME: str = "train_features.fmx"
TEST_FEATURES_NAME: str = "test_features.fmx"
SELECTION_NAME: str = "selection.json"
PATH_NAME: str = "path.json"
SPARSE_MODEL_NAME: str = "sparse_model.json"
FINAL_MODEL_NAME: str = "final_model.json"
FINAL_EXTRACTOR_NAME: str = "final_extractor.joblib"
FINETUNE_CURVES_NAME: str = "finetune_curves.csv"
METRICS_NAME: str = "metrics.json"
ALIGNMENT_NAME: str = "alignment.csv"

# Experiment-level outputs
SUMMARY_NAME: str = "summary.json"
RUN_INFO_NAME: str = "run_info.json"
PER_SEED_TABLE_NAME: str = "per_seed.csv"
AGGREGATE_TABLE_NAME: str = "aggregate.csv"

# =============================================================================
# GLOBAL PIPELINE PARAMETERS
# =============================================================================

# Reproducibility: default seed for all stochastic processes
RANDOM_SEED: int = 0

# Worker cap for seed-level parallelism (joblib)
MAX_THREADS: int = max(1, int(os.getenv("SLDD_THREADS", "1")))

# Metric names aggregated across seeds (mean and population std)
AGGREGATED_METRICS: list[str] = [
    "dense_accuracy",
    "sparse_accuracy",
    "final_accuracy",
    "n_w",
    "n_per_class",
    "total_features_used",
    "dense_loc_k",
    "sparse_loc_k",
    "final_loc_k",
    "selection_recovery",
]

