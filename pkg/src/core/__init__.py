from src.core.containers import (
    FeatureMapBatch,
    FeatureMatrix,
    LabelVector,
    Logits,
    ModelMeta,
    NormStats,
    SparseLinearModel,
)
from src.core.ops import SparsityMetrics, accuracy, pool_maps, predict, sparsity_metrics, standardize

__all__ = [
    "FeatureMapBatch",
    "FeatureMatrix",
    "LabelVector",
    "Logits",
    "ModelMeta",
    "NormStats",
    "SparseLinearModel",
    "SparsityMetrics",
    "accuracy",
    "pool_maps",
    "predict",
    "sparsity_metrics",
    "standardize",
]
