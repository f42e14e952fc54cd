import json
import struct

import numpy as np
import pandas as pd
import pytest

from src.core.containers import FeatureMapBatch, FeatureMatrix, LabelVector, ModelMeta, SparseLinearModel
from src.core.ops import sparsity_metrics, standardize
from src.exceptions import ArtifactError, CodecError
from src.preprocessing import codecs
from src.schemas import SolverConfig
from src.selection.selector import SelectionRecord, SelectionState
from src.solver.path import PathEntry, RegularizationPath

# =============================================================================
# BINARY TENSORS
# =============================================================================


def test_fmx_layout_is_little_endian_row_major():
    """Header is magic + u32 N + u32 F, then float64 values row by row."""
    values = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    payload = codecs.encode_fmx(values)

    assert payload[:4] == b"FMX1"
    assert struct.unpack_from("<II", payload, 4) == (2, 3)
    assert len(payload) == 12 + 6 * 8
    assert struct.unpack_from("<d", payload, 12 + 8)[0] == 2.0
    np.testing.assert_array_equal(codecs.decode_fmx(payload), values)


def test_fmx_file_keeps_norm_stats(tmp_path, rng):
    """The sidecar restores the normalization flag and statistics bit-exactly."""
    feats = standardize(FeatureMatrix(rng.normal(size=(7, 4))))
    path = codecs.write_fmx(tmp_path / "feats.fmx", feats)
    loaded = codecs.read_fmx(path)

    assert (tmp_path / "feats.fmx.meta.json").exists()
    assert loaded.normalized
    np.testing.assert_array_equal(loaded.values, feats.values)
    np.testing.assert_array_equal(loaded.norm_stats.mean, feats.norm_stats.mean)
    np.testing.assert_array_equal(loaded.norm_stats.std, feats.norm_stats.std)


def test_fmp_file_round_trip(tmp_path, rng):
    maps = FeatureMapBatch(rng.normal(size=(3, 2, 4, 5)))
    loaded = codecs.read_fmp(codecs.write_fmp(tmp_path / "maps.fmp", maps))
    np.testing.assert_array_equal(loaded.values, maps.values)


def test_decoders_reject_bad_magic_and_length():
    payload = codecs.encode_fmp(np.zeros((1, 1, 2, 2)))

    with pytest.raises(CodecError, match="magic"):
        codecs.decode_fmp(b"XXXX" + payload[4:])
    with pytest.raises(CodecError):
        codecs.decode_fmp(payload[:-8])
    with pytest.raises(CodecError):
        codecs.decode_fmx(payload)
    with pytest.raises(CodecError):
        codecs.decode_fmx(b"FMX")


def test_missing_artifact_is_an_io_error(tmp_path):
    with pytest.raises(ArtifactError):
        codecs.read_fmx(tmp_path / "absent.fmx")


def test_matrix_csv_import(tmp_path):
    """CSV matrices with a header row import as unnormalized features."""
    path = tmp_path / "feats.csv"
    pd.DataFrame({"f0": [1.0, 2.0], "f1": [3.5, -1.0]}).to_csv(path, index=False)
    feats = codecs.read_matrix_csv(path)

    assert not feats.normalized
    np.testing.assert_array_equal(feats.values, [[1.0, 3.5], [2.0, -1.0]])

    pd.DataFrame({"f0": ["a", "b"]}).to_csv(path, index=False)
    with pytest.raises(CodecError):
        codecs.read_matrix_csv(path)


# =============================================================================
# JSON DOCUMENTS
# =============================================================================


def test_model_document_round_trip(tmp_path):
    """Triplets, bias and metadata survive; the JSON key is `lambda`."""
    meta = ModelMeta(lambda_=0.125, alpha=0.99, seed=3, stage="sparsified")
    model = SparseLinearModel(np.array([[0.0, 1.25], [-0.5, 0.0]]), np.array([0.1, -0.1]), meta)
    path = codecs.save_model(tmp_path / "model.json", model, objective=0.75)

    document = json.loads(path.read_text())
    assert document["lambda"] == 0.125
    assert document["n_w"] == 2
    assert document["weights"] == [[0, 1, 1.25], [1, 0, -0.5]]

    loaded = codecs.load_model(path)
    np.testing.assert_array_equal(loaded.weights, model.weights)
    np.testing.assert_array_equal(loaded.bias, model.bias)
    assert loaded.meta == meta


def test_model_document_rejects_inconsistent_counts(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps({
        "n_w": 5, "n_per_class": 2.5, "n_features": 2, "weights": [[0, 0, 1.0]], "bias": [0.0, 0.0],
    }))
    with pytest.raises(CodecError):
        codecs.load_model(path)


def test_invalid_document_raises_codec_error(tmp_path):
    path = tmp_path / "labels.json"
    path.write_text("{not json")
    with pytest.raises(CodecError):
        codecs.load_labels(path)


def test_path_document_round_trip(tmp_path):
    config = SolverConfig(k_steps=2, seed=4)
    models = [
        SparseLinearModel(np.zeros((2, 3)), np.array([0.2, -0.2]), ModelMeta(lambda_=1.0)),
        SparseLinearModel(np.array([[0.0, 0.5, 0.0], [0.0, -0.5, 0.25]]), np.zeros(2), ModelMeta(lambda_=0.5)),
    ]
    entries = tuple(
        PathEntry(m.meta.lambda_, m, objective=0.9 - 0.1 * i, metrics=sparsity_metrics(m), epochs=i * 7)
        for i, m in enumerate(models)
    )
    path = codecs.save_path(tmp_path / "path.json", RegularizationPath(entries, config, "elementwise"))
    loaded = codecs.load_path(path)

    assert loaded.config == config
    assert loaded.lambdas.tolist() == [1.0, 0.5]
    assert [e.epochs for e in loaded] == [0, 7]
    assert [e.metrics.n_w for e in loaded] == [0, 3]
    np.testing.assert_array_equal(loaded[1].model.weights, models[1].weights)


def test_selection_and_labels_round_trip(tmp_path):
    state = SelectionState((4, 1), (SelectionRecord(0, 4, 0.3, 0.01), SelectionRecord(1, 1, 0.2, 0.02)))
    assert codecs.load_selection(codecs.save_selection(tmp_path / "sel.json", state)) == state

    labels = LabelVector([2, 0, 1, 1], 3)
    loaded = codecs.load_labels(codecs.save_labels(tmp_path / "labels.json", labels))
    assert loaded.num_classes == 3
    np.testing.assert_array_equal(loaded.labels, labels.labels)
