"""File codecs for every artifact the stages exchange.

Binary tensors:
    FMX1  magic, u32 N, u32 F, then N*F float64 (little endian, row-major),
          plus an optional `<name>.meta.json` sidecar with the norm stats.
    FMP1  magic, u32 N, F, H, W, then float64 values in (n, l, i, j) order.

JSON documents (models, paths, selections, labels) are pydantic models.
"""
import struct
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.core.containers import FeatureMapBatch, FeatureMatrix, LabelVector, ModelMeta, NormStats, SparseLinearModel
from src.core.ops import sparsity_metrics
from src.exceptions import ArtifactError, CodecError
from src.schemas import SolverConfig
from src.selection.selector import SelectionRecord, SelectionState
from src.solver.path import PathEntry, RegularizationPath

FMX_MAGIC: bytes = b"FMX1"
FMP_MAGIC: bytes = b"FMP1"
_FMX_HEADER = struct.Struct("<4sII")
_FMP_HEADER = struct.Struct("<4sIIII")
_F64_LE = np.dtype("<f8")

Document = TypeVar("Document", bound=BaseModel)


# =============================================================================
# BINARY TENSORS
# =============================================================================

def encode_fmx(values: np.ndarray) -> bytes:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise CodecError(f"FMX1 stores 2-D matrices, got shape {values.shape}")
    return _FMX_HEADER.pack(FMX_MAGIC, *values.shape) + values.astype(_F64_LE).tobytes(order="C")


def decode_fmx(payload: bytes) -> np.ndarray:
    if len(payload) < _FMX_HEADER.size:
        raise CodecError("truncated FMX1 header")
    magic, n, f = _FMX_HEADER.unpack_from(payload)
    if magic != FMX_MAGIC:
        raise CodecError(f"bad magic {magic!r}, expected {FMX_MAGIC!r}")
    return _decode_body(payload, _FMX_HEADER.size, (n, f), "FMX1")


def encode_fmp(values: np.ndarray) -> bytes:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 4:
        raise CodecError(f"FMP1 stores 4-D tensors, got shape {values.shape}")
    return _FMP_HEADER.pack(FMP_MAGIC, *values.shape) + values.astype(_F64_LE).tobytes(order="C")


def decode_fmp(payload: bytes) -> np.ndarray:
    if len(payload) < _FMP_HEADER.size:
        raise CodecError("truncated FMP1 header")
    magic, *shape = _FMP_HEADER.unpack_from(payload)
    if magic != FMP_MAGIC:
        raise CodecError(f"bad magic {magic!r}, expected {FMP_MAGIC!r}")
    return _decode_body(payload, _FMP_HEADER.size, tuple(shape), "FMP1")


def _decode_body(payload: bytes, offset: int, shape: tuple[int, ...], kind: str) -> np.ndarray:
    expected = int(np.prod(shape)) * _F64_LE.itemsize
    if len(payload) - offset != expected:
        raise CodecError(f"{kind} body holds {len(payload) - offset} bytes, header announces {expected}")
    return np.frombuffer(payload, dtype=_F64_LE, offset=offset).astype(np.float64).reshape(shape)


class FeatureMeta(BaseModel):
    """FMX1 sidecar: normalization flag and statistics."""

    model_config = ConfigDict(extra="forbid")

    normalized: bool = False
    mean: list[float] | None = None
    std: list[float] | None = None
    constant: list[bool] | None = None


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def write_fmx(path: Path, feats: FeatureMatrix) -> Path:
    path = Path(path)
    _write_bytes(path, encode_fmx(feats.values))
    stats = feats.norm_stats
    meta = FeatureMeta(
        normalized=feats.normalized,
        mean=None if stats is None else stats.mean.tolist(),
        std=None if stats is None else stats.std.tolist(),
        constant=None if stats is None else stats.constant.tolist(),
    )
    _write_text(_sidecar(path), meta.model_dump_json(indent=2))
    return path


def read_fmx(path: Path) -> FeatureMatrix:
    path = Path(path)
    values = decode_fmx(_read_bytes(path))
    sidecar = _sidecar(path)
    if not sidecar.exists():
        return FeatureMatrix(values)
    meta = _parse(FeatureMeta, _read_text(sidecar), sidecar)
    stats = None
    if meta.mean is not None:
        stats = NormStats(np.array(meta.mean), np.array(meta.std), np.array(meta.constant, dtype=bool))
    return FeatureMatrix(values, normalized=meta.normalized, norm_stats=stats)


def write_fmp(path: Path, maps: FeatureMapBatch | np.ndarray) -> Path:
    values = maps.values if isinstance(maps, FeatureMapBatch) else maps
    return _write_bytes(Path(path), encode_fmp(values))


def read_fmp(path: Path) -> FeatureMapBatch:
    return FeatureMapBatch(decode_fmp(_read_bytes(Path(path))))


def read_matrix_csv(path: Path) -> FeatureMatrix:
    """Imports an unnormalized matrix from a CSV with a header row."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"CSV not found: {path}")
    try:
        frame = pd.read_csv(path)
        values = frame.to_numpy(dtype=np.float64)
    except ValueError as exc:
        raise CodecError(f"{path.name} is not a numeric matrix: {exc}") from exc
    return FeatureMatrix(values)


# =============================================================================
# JSON DOCUMENTS
# =============================================================================

class ModelDocument(BaseModel):
    """One model, also used for every path entry."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    lambda_: float | None = Field(None, alias="lambda")
    objective: float | None = None
    n_w: int
    n_per_class: float
    n_features: int
    weights: list[tuple[int, int, float]]
    bias: list[float]
    alpha: float | None = None
    seed: int | None = None
    stage: str = "dense"
    epochs: int = 0

    @classmethod
    def from_model(cls, model: SparseLinearModel, objective: float | None = None, epochs: int = 0) -> "ModelDocument":
        metrics = sparsity_metrics(model)
        return cls(
            lambda_=model.meta.lambda_,
            objective=objective,
            n_w=metrics.n_w,
            n_per_class=metrics.n_per_class,
            n_features=model.n_features,
            weights=model.triplets,
            bias=model.bias.tolist(),
            alpha=model.meta.alpha,
            seed=model.meta.seed,
            stage=model.meta.stage,
            epochs=epochs,
        )

    def to_model(self) -> SparseLinearModel:
        meta = ModelMeta(lambda_=self.lambda_, alpha=self.alpha, seed=self.seed, stage=self.stage)
        model = SparseLinearModel.from_triplets(self.weights, self.bias, self.n_features, meta)
        if sparsity_metrics(model).n_w != self.n_w:
            raise CodecError(f"document announces n_w={self.n_w} but stores {sparsity_metrics(model).n_w} nonzeros")
        return model


class PathDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict[str, Any]
    prox: str = "elementwise"
    entries: list[ModelDocument]


class SelectionDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    selected: list[int]
    history: list[dict[str, float | int]]


class LabelsDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_classes: int
    labels: list[int]


class GroundTruthDocument(BaseModel):
    """Planted signal features and bump centres of a synthetic dataset."""

    model_config = ConfigDict(extra="forbid")

    class_features: list[list[int]]
    locations: list[list[list[int]]] | None = None


def save_model(path: Path, model: SparseLinearModel, objective: float | None = None) -> Path:
    return write_document(path, ModelDocument.from_model(model, objective))


def load_model(path: Path) -> SparseLinearModel:
    return read_document(path, ModelDocument).to_model()


def save_path(path: Path, reg_path: RegularizationPath) -> Path:
    document = PathDocument(
        config=reg_path.config.model_dump(mode="json"),
        prox=reg_path.prox_kind,
        entries=[ModelDocument.from_model(e.model, e.objective, e.epochs) for e in reg_path],
    )
    return write_document(path, document)


def load_path(path: Path) -> RegularizationPath:
    document = read_document(path, PathDocument)
    entries = []
    for item in document.entries:
        if item.lambda_ is None or item.objective is None:
            raise CodecError(f"path entry without lambda or objective in {Path(path).name}")
        model = item.to_model()
        entries.append(PathEntry(item.lambda_, model, item.objective, sparsity_metrics(model), item.epochs))
    return RegularizationPath(tuple(entries), SolverConfig.model_validate(document.config), document.prox)


def save_selection(path: Path, state: SelectionState) -> Path:
    document = SelectionDocument(
        selected=list(state.selected),
        history=[
            {
                "restart_index": r.restart_index,
                "added_feature": r.added_feature,
                "lambda_at_entry": r.lambda_at_entry,
                "column_norm": r.column_norm,
            }
            for r in state.history
        ],
    )
    return write_document(path, document)


def load_selection(path: Path) -> SelectionState:
    document = read_document(path, SelectionDocument)
    history = tuple(
        SelectionRecord(int(h["restart_index"]), int(h["added_feature"]), float(h["lambda_at_entry"]), float(h["column_norm"]))
        for h in document.history
    )
    return SelectionState(tuple(document.selected), history)


def save_labels(path: Path, labels: LabelVector) -> Path:
    return write_document(path, LabelsDocument(num_classes=labels.num_classes, labels=labels.labels.tolist()))


def load_labels(path: Path) -> LabelVector:
    document = read_document(path, LabelsDocument)
    return LabelVector(np.array(document.labels, dtype=np.int64), document.num_classes)


def write_document(path: Path, document: BaseModel) -> Path:
    return _write_text(Path(path), document.model_dump_json(indent=2, by_alias=True))


def read_document(path: Path, schema: type[Document]) -> Document:
    path = Path(path)
    return _parse(schema, _read_text(path), path)


# =============================================================================
# FILE ACCESS
# =============================================================================

def _parse(schema: type[Document], text: str, path: Path) -> Document:
    try:
        return schema.model_validate_json(text)
    except ValidationError as exc:
        raise CodecError(f"{path.name} is not a valid {schema.__name__}: {exc.error_count()} error(s)") from exc


def _write_bytes(path: Path, payload: bytes) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as exc:
        raise ArtifactError(f"cannot write {path}: {exc}") from exc
    return path


def _write_text(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise ArtifactError(f"cannot write {path}: {exc}") from exc
    return path


def _read_bytes(path: Path) -> bytes:
    if not path.exists():
        raise ArtifactError(f"artifact not found: {path}")
    try:
        return path.read_bytes()
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc


def _read_text(path: Path) -> str:
    return _read_bytes(path).decode("utf-8")
