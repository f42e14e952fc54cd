import numpy as np
import pytest

from src.core.containers import FeatureMapBatch, LabelVector, SparseLinearModel
from src.evaluation.evaluator import ModelEvaluator, feature_recovery
from src.schemas import MetricsConfig


def _indicator_maps() -> tuple[FeatureMapBatch, LabelVector]:
    """Example n lights up the map of its own class."""
    labels = np.array([0, 1, 1, 0])
    maps = np.zeros((4, 2, 2, 2))
    maps[np.arange(4), labels] = 1.0
    return FeatureMapBatch(maps), LabelVector(labels, 2)


def test_evaluate_scores_accuracy_and_sparsity():
    """Identity weights read the indicator maps perfectly.

    Raises:
        AssertionError: If accuracy or sparsity differ from the hand-computed values.
    """
    maps, labels = _indicator_maps()
    model = SparseLinearModel(np.eye(2), np.zeros(2))
    evaluation = ModelEvaluator(MetricsConfig(k=2)).evaluate("final", model, maps, labels)

    assert evaluation.accuracy == 1.0
    assert evaluation.sparsity.n_w == 2
    assert evaluation.sparsity.n_per_class == 1.0
    # Each class uses one feature, so no example is eligible for k = 2
    assert evaluation.diversity is not None and evaluation.diversity.mean is None
    assert evaluation.as_dict()["loc_k"]["n_eligible"] == 0


def test_loc_k_is_skipped_when_k_exceeds_the_features():
    maps, labels = _indicator_maps()
    evaluation = ModelEvaluator(MetricsConfig(k=3)).evaluate("dense", SparseLinearModel(np.eye(2), np.zeros(2)), maps, labels)
    assert evaluation.diversity is None
    assert evaluation.as_dict()["loc_k"] is None


def test_flatten_uses_the_last_stage_sparsity(capsys):
    maps, labels = _indicator_maps()
    evaluator = ModelEvaluator(MetricsConfig(k=1))
    dense = evaluator.evaluate("dense", SparseLinearModel(np.ones((2, 2)), np.zeros(2)), maps, labels)
    final = evaluator.evaluate("final", SparseLinearModel(np.eye(2), np.zeros(2)), maps, labels)
    flat = ModelEvaluator.flatten([dense, final])

    assert flat["dense_accuracy"] == 0.5
    assert flat["final_accuracy"] == 1.0
    assert flat["final_loc_k"] == pytest.approx(1.0)
    assert flat["n_w"] == 2 and flat["total_features_used"] == 2
    assert ModelEvaluator.flatten([]) == {}

    ModelEvaluator.display([dense, final])
    assert "SLDD STAGE METRICS" in capsys.readouterr().out


def test_feature_recovery():
    assert feature_recovery([1, 2, 3, 9], np.array([1, 2, 5, 9])) == 0.75
    assert feature_recovery([], np.array([1])) == 0.0
    assert feature_recovery([1], np.array([], dtype=np.int64)) == 0.0
