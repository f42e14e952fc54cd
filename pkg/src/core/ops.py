from dataclasses import dataclass

import numpy as np
from sklearn.preprocessing import StandardScaler

from src.core.containers import (
    FeatureMapBatch,
    FeatureMatrix,
    LabelVector,
    Logits,
    NormStats,
    SparseLinearModel,
)
from src.exceptions import ConfigurationError, ShapeMismatchError

# Columns whose raw population std falls below this are treated as constant
CONSTANT_STD_TOL: float = 1e-12


@dataclass(frozen=True)
class SparsityMetrics:
    n_w: int
    n_per_class: float
    total_features_used: int

    def as_dict(self) -> dict[str, float]:
        return {"n_w": self.n_w, "n_per_class": self.n_per_class, "total_features_used": self.total_features_used}


def standardize(raw: FeatureMatrix) -> FeatureMatrix:
    """Column-standardizes a raw feature matrix with population statistics.

    Args:
        raw (FeatureMatrix): Unnormalized features.

    Returns:
        FeatureMatrix: Standardized copy carrying its `NormStats`. Constant
            columns are set to 0 and flagged in `norm_stats.constant`.

    Raises:
        ConfigurationError: If the matrix is already normalized.
    """
    if raw.normalized:
        raise ConfigurationError("feature matrix is already standardized")

    # StandardScaler uses the population (1/N) variance
    scaler = StandardScaler().fit(raw.values)
    std = np.sqrt(scaler.var_)
    stats = NormStats(mean=scaler.mean_, std=std, constant=std < CONSTANT_STD_TOL)
    return FeatureMatrix(stats.apply(raw.values), normalized=True, norm_stats=stats)


def pool_maps(maps: FeatureMapBatch) -> FeatureMatrix:
    """Spatial average pooling: entry (n, l) is the mean of map l of example n."""
    return FeatureMatrix(maps.values.mean(axis=(2, 3)), normalized=False)


def predict(model: SparseLinearModel, feats: FeatureMatrix) -> Logits:
    """Evaluates the decision layer on every row using only the support entries.

    Raises:
        ShapeMismatchError: If the feature count differs from the model's.
    """
    if feats.n_features != model.n_features:
        raise ShapeMismatchError(f"model expects {model.n_features} features, got {feats.n_features}")
    logits = np.asarray(model.sparse_weights @ feats.values.T).T + model.bias
    return Logits(logits)


def sparsity_metrics(model: SparseLinearModel) -> SparsityMetrics:
    n_w = int(np.count_nonzero(model.weights))
    return SparsityMetrics(
        n_w=n_w,
        n_per_class=n_w / model.n_classes,
        total_features_used=int(model.used_features.shape[0]),
    )


def accuracy(logits: Logits, labels: LabelVector) -> float:
    if logits.values.shape[0] != len(labels):
        raise ShapeMismatchError("logits and labels disagree on the number of examples")
    return float(np.mean(logits.predicted == labels.labels))
