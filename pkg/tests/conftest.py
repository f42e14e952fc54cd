from pathlib import Path

import numpy as np
import pytest
import yaml

from src.core.containers import FeatureMatrix, LabelVector
from src.core.ops import pool_maps, standardize
from src.preprocessing.synthetic import SyntheticDataset, generate_synthetic
from src.schemas import PipelineConfig, SyntheticSpec

# =============================================================================
# DATA FIXTURES
# =============================================================================


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_spec() -> SyntheticSpec:
    """3 classes, 2 signal maps each, 12 feature maps of 5 x 5."""
    return SyntheticSpec(
        n_classes=3, n_features=12, k_true=2, map_height=5, map_width=5, n_train=90, n_test=60, seed=0,
    )


@pytest.fixture(scope="session")
def small_dataset(small_spec: SyntheticSpec) -> SyntheticDataset:
    return generate_synthetic(small_spec)


@pytest.fixture(scope="session")
def small_features(small_dataset: SyntheticDataset) -> tuple[FeatureMatrix, LabelVector]:
    """Standardized pooled training features of the small planted dataset."""
    return standardize(pool_maps(small_dataset.train_maps)), small_dataset.train_labels


def blob_features(seed: int, n: int = 200, n_features: int = 20, n_classes: int = 5) -> tuple[FeatureMatrix, LabelVector]:
    """Overlapping gaussian classes in feature space, standardized."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % n_classes
    centres = rng.normal(0.0, 1.0, size=(n_classes, n_features))
    raw = centres[labels] + rng.normal(0.0, 1.5, size=(n, n_features))
    return standardize(FeatureMatrix(raw)), LabelVector(labels, n_classes)


# =============================================================================
# PIPELINE FIXTURES
# =============================================================================


def tiny_config_document(output_dir: Path, seeds: list[int] | None = None) -> dict:
    """A pipeline config small enough to run every stage in a few seconds."""
    trainer = {"epochs": 3, "lr": 1e-2, "batch_size": 16, "momentum": 0.9, "feature_dropout": 0.1}
    return {
        "output_dir": str(output_dir),
        "seeds": seeds or [0, 1],
        "synthetic": {
            "n_classes": 3, "n_features": 9, "k_true": 2, "map_height": 5, "map_width": 5,
            "n_train": 60, "n_test": 30, "seed": 0,
        },
        "solver": {"k_steps": 10, "max_epochs": 20, "batch_size": 16},
        "selection": {"n_target": 5},
        "sparsify": {"budget_select": 5, "budget_final": 2},
        "dense": {**trainer, "freeze_support": False},
        "finetune": {**trainer, "freeze_support": True},
        "metrics": {"k": 2, "alignment_threshold": 0.2},
        "localization": {"sizes": [1, 2, 5]},
    }


@pytest.fixture
def tiny_config(tmp_path: Path) -> PipelineConfig:
    return PipelineConfig.model_validate(tiny_config_document(tmp_path / "run"))


@pytest.fixture
def tiny_config_file(tmp_path: Path) -> Path:
    path = tmp_path / "tiny.yaml"
    document = tiny_config_document(tmp_path / "run", seeds=[0])
    path.write_text(yaml.safe_dump(document), encoding="utf-8")
    return path
