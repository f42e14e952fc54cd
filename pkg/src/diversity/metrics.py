from dataclasses import dataclass

import numpy as np

from src.core.containers import FeatureMapBatch, SparseLinearModel
from src.diversity.loss import spatial_softmax
from src.exceptions import ConfigurationError, ShapeMismatchError


@dataclass(frozen=True)
class DiversityReport:
    """loc_k per example with its aggregates.

    Attributes:
        k (int): Number of top-weighted features per example.
        per_example (np.ndarray): loc_k of every example, in [1/k, 1].
        eligible (np.ndarray): Examples whose class has >= k nonzero weights.
        mean (float | None): Per-example mean over eligible examples (headline).
        class_means (dict[int, float]): Mean over eligible examples per class.
        mean_of_class_means (float | None): Mean of `class_means`.
        population (str): Description of the averaging population.
    """

    k: int
    per_example: np.ndarray
    eligible: np.ndarray
    mean: float | None
    class_means: dict[int, float]
    mean_of_class_means: float | None
    population: str

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "mean": self.mean,
            "mean_of_class_means": self.mean_of_class_means,
            "class_means": {str(c): v for c, v in self.class_means.items()},
            "n_eligible": int(self.eligible.sum()),
            "n_examples": int(self.eligible.shape[0]),
            "population": self.population,
        }


def top_k_features(row: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest |w|, ties to the lower feature index."""
    return np.argsort(-np.abs(row), kind="stable")[:k]


def loc_k(
    maps: FeatureMapBatch | np.ndarray,
    model: SparseLinearModel,
    classes: np.ndarray,
    k: int = 5,
) -> DiversityReport:
    """How differently the k most-weighted feature maps of each example localize.

    For each example the plain spatial softmax of the k features with the
    largest |w_cl| for its class c is cross-channel max-pooled and summed,
    then divided by k.

    Args:
        maps (FeatureMapBatch | np.ndarray): N x F x H x W maps.
        model (SparseLinearModel): Decision layer providing the weights.
        classes (np.ndarray): Class per example (predictions or labels).
        k (int): Number of features compared.

    Returns:
        DiversityReport: Per-example values and aggregates; the aggregates are
            None when no example's class has at least k nonzero weights.
    """
    maps = maps.values if isinstance(maps, FeatureMapBatch) else np.asarray(maps, dtype=np.float64)
    classes = np.asarray(classes, dtype=np.int64).reshape(-1)
    if k < 1 or k > model.n_features:
        raise ConfigurationError(f"k must lie in [1, {model.n_features}], got {k}")
    if maps.shape[1] != model.n_features or maps.shape[0] != classes.shape[0]:
        raise ShapeMismatchError(f"maps {maps.shape} do not match the model or the {classes.shape[0]} classes")

    top = np.stack([top_k_features(model.weights[c], k) for c in range(model.n_classes)])
    chosen = top[classes]
    selected_maps = np.take_along_axis(maps, chosen[:, :, None, None], axis=1)
    probs = spatial_softmax(selected_maps)
    per_example = probs.max(axis=1).sum(axis=(1, 2)) / k

    support_size = np.count_nonzero(model.weights, axis=1)
    eligible = support_size[classes] >= k
    mean = float(per_example[eligible].mean()) if eligible.any() else None
    class_means = {
        int(c): float(per_example[eligible & (classes == c)].mean())
        for c in np.unique(classes[eligible])
    }
    mean_of_class_means = float(np.mean(list(class_means.values()))) if class_means else None

    return DiversityReport(
        k=k,
        per_example=per_example,
        eligible=eligible,
        mean=mean,
        class_means=class_means,
        mean_of_class_means=mean_of_class_means,
        population=f"examples whose class uses at least {k} features",
    )
