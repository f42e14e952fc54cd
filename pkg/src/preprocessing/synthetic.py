from dataclasses import dataclass

import numpy as np
import pandas as pd

from src.core.containers import FeatureMapBatch, LabelVector
from src.evaluation.alignment import ABSENT, DEFINITELY, GUESSING, PROBABLY, AttributeTable
from src.schemas import SyntheticSpec


@dataclass(frozen=True)
class SyntheticDataset:
    """Planted benchmark: class-specific spatial bumps on a few feature maps.

    Attributes:
        train_maps (FeatureMapBatch): Training maps (N_train x F x H x W).
        test_maps (FeatureMapBatch): Test maps.
        train_labels (LabelVector): Training classes.
        test_labels (LabelVector): Test classes.
        class_features (np.ndarray): C x k_true signal feature indices.
        locations (np.ndarray): C x k_true x 2 bump centres (row, column).
        attributes (AttributeTable): Certainty labels of the training examples.
    """

    train_maps: FeatureMapBatch
    test_maps: FeatureMapBatch
    train_labels: LabelVector
    test_labels: LabelVector
    class_features: np.ndarray
    locations: np.ndarray
    attributes: AttributeTable

    @property
    def support(self) -> frozenset[tuple[int, int]]:
        """Ground-truth (class, feature) pairs."""
        return frozenset(
            (c, int(f)) for c in range(self.class_features.shape[0]) for f in self.class_features[c]
        )

    @property
    def signal_features(self) -> np.ndarray:
        return np.unique(self.class_features)


def _bump(height: int, width: int, centre: np.ndarray, bump_width: float) -> np.ndarray:
    """Gaussian bump with peak value 1 at `centre`."""
    rows = np.arange(height)[:, None] - centre[0]
    cols = np.arange(width)[None, :] - centre[1]
    return np.exp(-(rows ** 2 + cols ** 2) / (2.0 * bump_width ** 2))


def _interior(size: int) -> tuple[int, int]:
    """Half-open range of rows (or columns) that avoid the border when possible."""
    return (1, size - 1) if size >= 3 else (0, size)


def _draw_split(
    rng: np.random.Generator,
    spec: SyntheticSpec,
    n: int,
    class_features: np.ndarray,
    bumps: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    # Balanced classes in random order
    labels = rng.permutation(np.arange(n) % spec.n_classes)
    maps = rng.normal(0.0, spec.noise_std, size=(n, spec.n_features, spec.map_height, spec.map_width))
    amplitudes = np.abs(rng.normal(spec.amplitude_mean, spec.amplitude_std, size=(n, spec.k_true)))
    rows = np.arange(n)[:, None]
    maps[rows, class_features[labels]] += amplitudes[:, :, None, None] * bumps[labels]
    return maps, labels


def _attribute_table(
    rng: np.random.Generator,
    spec: SyntheticSpec,
    labels: np.ndarray,
    class_features: np.ndarray,
) -> AttributeTable:
    """One attribute per signal feature; coupled tables mark it on the classes using that feature."""
    signal = np.unique(class_features)
    n = labels.shape[0]
    if spec.attribute_coupling:
        present = (class_features[labels][:, :, None] == signal[None, None, :]).any(axis=1)
        codes = np.where(present, DEFINITELY, ABSENT)
    else:
        codes = rng.choice(np.array([ABSENT, PROBABLY, DEFINITELY]), size=(n, signal.shape[0]))
    guessed = rng.random(size=codes.shape) < spec.guessing_rate
    codes = np.where(guessed, GUESSING, codes)
    names = [f"attr_{int(f):03d}" for f in signal]
    return AttributeTable(pd.DataFrame(codes, columns=names))


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Generates a planted train/test benchmark deterministically from `spec.seed`.

    Each class owns `k_true` signal features (disjoint across classes unless
    `shared_features`). Every example of class c carries, on each of its
    class's signal maps, a gaussian bump at a fixed interior location scaled
    by an amplitude ~ |Normal(amplitude_mean, amplitude_std)|. All cells get
    Normal(0, noise_std) noise.

    Args:
        spec (SyntheticSpec): Validated generation parameters.

    Returns:
        SyntheticDataset: Maps, labels, ground truth and the attribute table.
    """
    rng = np.random.default_rng(spec.seed)
    n_classes, k_true = spec.n_classes, spec.k_true

    if spec.shared_features:
        class_features = np.stack([rng.choice(spec.n_features, size=k_true, replace=False) for _ in range(n_classes)])
    else:
        class_features = rng.permutation(spec.n_features)[: n_classes * k_true].reshape(n_classes, k_true)

    row_lo, row_hi = _interior(spec.map_height)
    col_lo, col_hi = _interior(spec.map_width)
    locations = np.stack(
        [rng.integers(row_lo, row_hi, size=(n_classes, k_true)), rng.integers(col_lo, col_hi, size=(n_classes, k_true))],
        axis=-1,
    )
    bumps = np.array(
        [
            [_bump(spec.map_height, spec.map_width, locations[c, j], spec.bump_width) for j in range(k_true)]
            for c in range(n_classes)
        ]
    )

    train_maps, train_labels = _draw_split(rng, spec, spec.n_train, class_features, bumps)
    test_maps, test_labels = _draw_split(rng, spec, spec.n_test, class_features, bumps)
    attributes = _attribute_table(rng, spec, train_labels, class_features)

    return SyntheticDataset(
        train_maps=FeatureMapBatch(train_maps),
        test_maps=FeatureMapBatch(test_maps),
        train_labels=LabelVector(train_labels, n_classes),
        test_labels=LabelVector(test_labels, n_classes),
        class_features=class_features,
        locations=locations,
        attributes=attributes,
    )
