"""Immutable data containers shared by every stage.

All arrays are float64 (labels int64) and marked read-only after
construction, so instances are safe to share between threads.
"""
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
from scipy import sparse

from src.exceptions import ConfigurationError, NonFiniteError, ShapeMismatchError


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _check_finite(values: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        raise NonFiniteError(f"{what} contains non-finite values", tuple(int(i) for i in np.argwhere(bad)[0]))


# =============================================================================
# FEATURES
# =============================================================================

@dataclass(frozen=True)
class NormStats:
    """Per-feature standardization statistics (population std).

    Attributes:
        mean (np.ndarray): Column means, shape (F,).
        std (np.ndarray): Column population standard deviations, shape (F,).
        constant (np.ndarray): Boolean mask of columns with std < 1e-12.
    """

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", _frozen(np.array(self.mean, dtype=np.float64)))
        object.__setattr__(self, "std", _frozen(np.array(self.std, dtype=np.float64)))
        object.__setattr__(self, "constant", _frozen(np.array(self.constant, dtype=bool)))

    @property
    def scale(self) -> np.ndarray:
        """Divisor used for each column (1 for constant columns)."""
        return np.where(self.constant, 1.0, self.std)

    def apply(self, raw: np.ndarray) -> np.ndarray:
        """Standardizes raw rows with the stored statistics; constant columns map to 0."""
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape[-1] != self.mean.shape[0]:
            raise ShapeMismatchError(f"expected {self.mean.shape[0]} features, got {raw.shape[-1]}")
        out = (raw - self.mean) / self.scale
        out[..., self.constant] = 0.0
        return out

    def subset(self, columns: Iterable[int]) -> "NormStats":
        idx = np.asarray(list(columns), dtype=np.int64)
        return NormStats(self.mean[idx], self.std[idx], self.constant[idx])


@dataclass(frozen=True)
class FeatureMatrix:
    """N x F pooled feature values (one row per example)."""

    values: np.ndarray
    normalized: bool = False
    norm_stats: NormStats | None = None

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeMismatchError(f"feature matrix must be 2-D, got shape {values.shape}")
        _check_finite(values, "feature matrix")
        object.__setattr__(self, "values", _frozen(values))
        if self.norm_stats is not None and self.norm_stats.mean.shape[0] != values.shape[1]:
            raise ShapeMismatchError("norm_stats do not match the number of features")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def select_columns(self, columns: Iterable[int]) -> "FeatureMatrix":
        """Restricts the matrix (and its statistics) to the given feature columns."""
        idx = np.asarray(list(columns), dtype=np.int64)
        stats = None if self.norm_stats is None else self.norm_stats.subset(idx)
        return FeatureMatrix(self.values[:, idx], self.normalized, stats)


@dataclass(frozen=True)
class FeatureMapBatch:
    """N x F x H_m x W_m spatial feature maps."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 4:
            raise ShapeMismatchError(f"feature maps must be 4-D (N, F, H, W), got shape {values.shape}")
        if values.shape[2] < 1 or values.shape[3] < 1:
            raise ShapeMismatchError("feature maps need H_m >= 1 and W_m >= 1")
        _check_finite(values, "feature maps")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.values.shape[2], self.values.shape[3]


@dataclass(frozen=True)
class LabelVector:
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if self.num_classes < 2:
            raise ConfigurationError("at least two classes are required")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ConfigurationError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "labels", _frozen(labels))

    def __len__(self) -> int:
        return self.labels.shape[0]

    def one_hot(self) -> np.ndarray:
        out = np.zeros((len(self), self.num_classes))
        out[np.arange(len(self)), self.labels] = 1.0
        return out

    def take(self, index: np.ndarray) -> "LabelVector":
        return LabelVector(self.labels[index], self.num_classes)


@dataclass(frozen=True)
class Logits:
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        _check_finite(values, "logits")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def predicted(self) -> np.ndarray:
        """Predicted class per row; ties resolve to the lowest class index."""
        return np.argmax(self.values, axis=1)


# =============================================================================
# DECISION LAYER
# =============================================================================

@dataclass(frozen=True)
class ModelMeta:
    lambda_: float | None = None
    alpha: float | None = None
    seed: int | None = None
    stage: str = "dense"


@dataclass(frozen=True)
class SparseLinearModel:
    """Linear decision layer o = W f + b with an explicit support.

    The dense C x F array is the storage; `triplets` and `sparse_weights` are
    views of its nonzero entries.
    """

    weights: np.ndarray
    bias: np.ndarray
    meta: ModelMeta = field(default_factory=ModelMeta)

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=np.float64)
        bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if weights.ndim != 2 or bias.shape[0] != weights.shape[0]:
            raise ShapeMismatchError(f"weights {weights.shape} and bias {bias.shape} disagree")
        _check_finite(weights, "weights")
        _check_finite(bias, "bias")
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "bias", _frozen(bias))

    # --- Construction --------------------------------------------------------

    @classmethod
    def zeros(cls, n_classes: int, n_features: int, meta: ModelMeta | None = None) -> "SparseLinearModel":
        return cls(np.zeros((n_classes, n_features)), np.zeros(n_classes), meta or ModelMeta())

    @classmethod
    def random(cls, n_classes: int, n_features: int, seed: int, scale: float = 0.01) -> "SparseLinearModel":
        """Dense gaussian initialization used for the dense training stage."""
        rng = np.random.default_rng(seed)
        weights = rng.normal(0.0, scale, size=(n_classes, n_features))
        return cls(weights, np.zeros(n_classes), ModelMeta(seed=seed, stage="dense"))

    @classmethod
    def from_triplets(
        cls,
        triplets: Iterable[tuple[int, int, float]],
        bias: Iterable[float],
        n_features: int,
        meta: ModelMeta | None = None,
    ) -> "SparseLinearModel":
        bias = np.asarray(list(bias), dtype=np.float64)
        weights = np.zeros((bias.shape[0], n_features))
        for c, f, v in triplets:
            weights[int(c), int(f)] = float(v)
        return cls(weights, bias, meta or ModelMeta())

    def with_values(self, weights: np.ndarray | None = None, bias: np.ndarray | None = None, **meta) -> "SparseLinearModel":
        """Copy with replaced arrays and/or metadata fields."""
        return SparseLinearModel(
            self.weights if weights is None else weights,
            self.bias if bias is None else bias,
            replace(self.meta, **meta) if meta else self.meta,
        )

    def expand(self, columns: Iterable[int], n_features: int) -> "SparseLinearModel":
        """Embeds a model fitted on a column subset into the full feature space."""
        idx = np.asarray(list(columns), dtype=np.int64)
        if idx.shape[0] != self.n_features:
            raise ShapeMismatchError(f"{idx.shape[0]} columns given for a model with {self.n_features} features")
        weights = np.zeros((self.n_classes, n_features))
        weights[:, idx] = self.weights
        return self.with_values(weights=weights)

    # --- Views ---------------------------------------------------------------

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    @property
    def support(self) -> frozenset[tuple[int, int]]:
        rows, cols = np.nonzero(self.weights)
        return frozenset(zip(rows.tolist(), cols.tolist()))

    @property
    def support_mask(self) -> np.ndarray:
        return self.weights != 0

    @property
    def triplets(self) -> list[tuple[int, int, float]]:
        """(class, feature, value) for every nonzero entry, row-major order."""
        rows, cols = np.nonzero(self.weights)
        return [(int(c), int(f), float(self.weights[c, f])) for c, f in zip(rows, cols)]

    @property
    def sparse_weights(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(self.weights)

    @property
    def used_features(self) -> np.ndarray:
        """Indices of feature columns with at least one nonzero weight."""
        return np.flatnonzero(np.any(self.weights != 0, axis=0))
