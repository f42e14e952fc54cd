import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from src.config import (
    ATTRIBUTES_NAME,
    GROUND_TRUTH_NAME,
    TEST_LABELS_NAME,
    TEST_MAPS_NAME,
    TRAIN_LABELS_NAME,
    TRAIN_MAPS_NAME,
)
from src.core.containers import FeatureMapBatch, FeatureMatrix, LabelVector, SparseLinearModel
from src.evaluation.alignment import AttributeTable
from src.exceptions import ArtifactError, ShapeMismatchError
from src.preprocessing import codecs
from src.preprocessing.synthetic import SyntheticDataset
from src.selection.selector import SelectionState
from src.solver.path import RegularizationPath
from src.training.extractor import ToyExtractor


@dataclass(frozen=True)
class DatasetBundle:
    """Train/test maps with labels, plus optional annotations and planted truth."""

    train_maps: FeatureMapBatch
    test_maps: FeatureMapBatch
    train_labels: LabelVector
    test_labels: LabelVector
    attributes: AttributeTable | None = None
    class_features: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.train_maps.n_samples != len(self.train_labels) or self.test_maps.n_samples != len(self.test_labels):
            raise ShapeMismatchError("maps and labels disagree on the number of examples")
        if self.train_maps.values.shape[1:] != self.test_maps.values.shape[1:]:
            raise ShapeMismatchError("train and test maps differ in channels or spatial size")

    @property
    def num_classes(self) -> int:
        return self.train_labels.num_classes

    @property
    def n_channels(self) -> int:
        return self.train_maps.n_features

    @property
    def planted_features(self) -> np.ndarray | None:
        return None if self.class_features is None else np.unique(self.class_features)

    @classmethod
    def from_synthetic(cls, dataset: SyntheticDataset) -> "DatasetBundle":
        return cls(
            train_maps=dataset.train_maps,
            test_maps=dataset.test_maps,
            train_labels=dataset.train_labels,
            test_labels=dataset.test_labels,
            attributes=dataset.attributes,
            class_features=dataset.class_features,
        )


def _persisted(path: Path) -> Path:
    print(f"📦 Artifact persisted: {path.name}")
    return path


class DatasetStore:
    """Reads and writes a dataset bundle in one directory.

    Layout: FMP1 maps and JSON labels for both splits, the long-format
    attribute CSV and the planted ground truth when available.
    """

    def __init__(self, root: str | Path) -> None:
        self.root: Path = Path(root)

    def exists(self) -> bool:
        required = [TRAIN_MAPS_NAME, TEST_MAPS_NAME, TRAIN_LABELS_NAME, TEST_LABELS_NAME]
        return all((self.root / name).exists() for name in required)

    def save(self, bundle: DatasetBundle) -> Path:
        codecs.write_fmp(self.root / TRAIN_MAPS_NAME, bundle.train_maps)
        codecs.write_fmp(self.root / TEST_MAPS_NAME, bundle.test_maps)
        codecs.save_labels(self.root / TRAIN_LABELS_NAME, bundle.train_labels)
        codecs.save_labels(self.root / TEST_LABELS_NAME, bundle.test_labels)
        if bundle.attributes is not None:
            bundle.attributes.to_csv(self.root / ATTRIBUTES_NAME)
        if bundle.class_features is not None:
            document = codecs.GroundTruthDocument(class_features=bundle.class_features.tolist())
            codecs.write_document(self.root / GROUND_TRUTH_NAME, document)
        print(f"✅ Dataset written to {self.root}")
        return self.root

    def load(self) -> DatasetBundle:
        """Loads the bundle.

        Raises:
            ArtifactError: If a required file is missing.
        """
        if not self.exists():
            raise ArtifactError(f"no dataset at {self.root}; run `gen` first")
        attributes_path = self.root / ATTRIBUTES_NAME
        truth_path = self.root / GROUND_TRUTH_NAME
        class_features = None
        if truth_path.exists():
            truth = codecs.read_document(truth_path, codecs.GroundTruthDocument)
            class_features = np.array(truth.class_features, dtype=np.int64)
        return DatasetBundle(
            train_maps=codecs.read_fmp(self.root / TRAIN_MAPS_NAME),
            test_maps=codecs.read_fmp(self.root / TEST_MAPS_NAME),
            train_labels=codecs.load_labels(self.root / TRAIN_LABELS_NAME),
            test_labels=codecs.load_labels(self.root / TEST_LABELS_NAME),
            attributes=AttributeTable.read_csv(attributes_path) if attributes_path.exists() else None,
            class_features=class_features,
        )


class ArtifactStore:
    """Stage artifacts of one seed.

    Writes always go to `root`; reads fall back to the parent store, so a
    sweep variant only stores what it recomputes.
    """

    def __init__(self, root: str | Path, parent: "ArtifactStore | None" = None) -> None:
        self.root: Path = Path(root)
        self.parent: ArtifactStore | None = parent

    def path(self, name: str) -> Path:
        return self.root / name

    def has(self, name: str) -> bool:
        return self.path(name).exists() or (self.parent is not None and self.parent.has(name))

    def locate(self, name: str) -> Path:
        if self.path(name).exists():
            return self.path(name)
        if self.parent is not None:
            return self.parent.locate(name)
        raise ArtifactError(f"missing artifact {name} in {self.root}; run the producing stage first")

    def child(self, name: str) -> "ArtifactStore":
        return ArtifactStore(self.root / name, parent=self)

    # --- Models and paths ----------------------------------------------------

    def save_model(self, name: str, model: SparseLinearModel, objective: float | None = None) -> Path:
        return _persisted(codecs.save_model(self.path(name), model, objective))

    def load_model(self, name: str) -> SparseLinearModel:
        return codecs.load_model(self.locate(name))

    def save_path(self, name: str, reg_path: RegularizationPath) -> Path:
        return _persisted(codecs.save_path(self.path(name), reg_path))

    def load_path(self, name: str) -> RegularizationPath:
        return codecs.load_path(self.locate(name))

    def save_selection(self, name: str, state: SelectionState) -> Path:
        return _persisted(codecs.save_selection(self.path(name), state))

    def load_selection(self, name: str) -> SelectionState:
        return codecs.load_selection(self.locate(name))

    # --- Features and extractors ---------------------------------------------

    def save_features(self, name: str, feats: FeatureMatrix) -> Path:
        return _persisted(codecs.write_fmx(self.path(name), feats))

    def load_features(self, name: str) -> FeatureMatrix:
        return codecs.read_fmx(self.locate(name))

    def save_extractor(self, name: str, extractor: ToyExtractor) -> Path:
        return _persisted(extractor.save(self.path(name)))

    def load_extractor(self, name: str) -> ToyExtractor:
        return ToyExtractor.load(self.locate(name))

    # --- Tables and documents ------------------------------------------------

    def save_table(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
        return _persisted(path)

    def load_table(self, name: str) -> pd.DataFrame:
        return pd.read_csv(self.locate(name))

    def save_json(self, name: str, payload: dict[str, Any]) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return _persisted(path)

    def load_json(self, name: str) -> dict[str, Any]:
        return json.loads(self.locate(name).read_text(encoding="utf-8"))
