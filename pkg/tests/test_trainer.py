import numpy as np
import pytest

from src.core.containers import FeatureMapBatch, FeatureMatrix, LabelVector, SparseLinearModel
from src.core.ops import pool_maps, standardize
from src.diversity.loss import scaled_maps
from src.exceptions import ConfigurationError, ShapeMismatchError
from src.schemas import FinetuneConfig, LrDecay
from src.training.extractor import ToyExtractor
from src.training.trainer import CURVE_COLUMNS, FeatureTrainer, FinalLoss, cross_entropy_grad, finetune

EPS = 1e-6


def _central_difference(loss, point: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(point)
    for index in np.ndindex(point.shape):
        plus, minus = point.copy(), point.copy()
        plus[index] += EPS
        minus[index] -= EPS
        grad[index] = (loss(plus) - loss(minus)) / (2 * EPS)
    return grad


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _margin(maps: np.ndarray, model: SparseLinearModel, logits: np.ndarray) -> float:
    """Smallest gap between the two largest candidates of every max or argmax the loss takes."""
    gaps = [float((np.sort(logits, axis=1)[:, -1] - np.sort(logits, axis=1)[:, -2]).min())]
    for maps_n, logits_n in zip(maps, logits):
        stack = np.sort(scaled_maps(maps_n, model, logits_n).values, axis=0)
        pooled = np.sort(maps_n.mean(axis=(1, 2)))
        gaps += [float((stack[-1] - stack[-2]).min()), float(pooled[-1] - pooled[-2])]
    return min(gaps)


def _sparse_model(rng: np.random.Generator, n_classes: int, n_features: int, density: float = 0.4) -> SparseLinearModel:
    weights = rng.normal(size=(n_classes, n_features)) * (rng.random((n_classes, n_features)) < density)
    weights[np.arange(n_classes), np.arange(n_classes) % n_features] = 1.0
    return SparseLinearModel(weights, np.zeros(n_classes))


# =============================================================================
# LOSS
# =============================================================================


def test_cross_entropy_examples():
    """Uniform logits cost log C; the gradient is (softmax - onehot) / N."""
    loss, grad = cross_entropy_grad(np.zeros((2, 4)), np.array([0, 3]))

    assert loss == pytest.approx(np.log(4.0))
    np.testing.assert_allclose(grad, [[-0.375, 0.125, 0.125, 0.125], [0.125, 0.125, 0.125, -0.375]])


def test_cross_entropy_gradient_matches_finite_differences(rng):
    labels = rng.integers(0, 5, size=6)
    logits = rng.normal(0.0, 2.0, size=(6, 5))
    _, grad = cross_entropy_grad(logits, labels)
    numeric = _central_difference(lambda z: cross_entropy_grad(z, labels)[0], logits)
    assert _relative_error(grad, numeric) <= 1e-6


def test_final_loss_gradient_matches_finite_differences(rng):
    """L_CE + beta * L_div through the extractor: W, b, A and c against central differences.

    Raises:
        AssertionError: If any block's relative error exceeds 1e-4.
    """
    checked = 0
    while checked < 100:
        inputs = rng.uniform(0.5, 1.5, size=(3, 3, 3, 3))
        extractor = ToyExtractor.random(3, 3, seed=int(rng.integers(1_000)), scale=0.1)
        stats = standardize(pool_maps(FeatureMapBatch(extractor.forward(inputs)))).norm_stats
        weights = rng.normal(0.0, 1.0, size=(3, 3))
        bias = rng.normal(0.0, 0.1, size=3)
        labels = rng.integers(0, 3, size=3)
        keep = (rng.random((3, 3)) > 0.2) / 0.8
        loss_fn = FinalLoss(beta=0.5, norm_stats=stats)
        maps = extractor.forward(inputs)
        clean_logits = loss_fn.normalize(maps.mean(axis=(2, 3))) @ weights.T + bias
        if _margin(maps, SparseLinearModel(weights, bias), clean_logits) < 1e-3:
            continue
        checked += 1

        def total(w=weights, b=bias, a=extractor.weights, c=extractor.offsets) -> float:
            ext = extractor.with_params(a, c)
            return loss_fn.evaluate(w, b, labels, inputs=inputs, extractor=ext, keep=keep).loss

        terms = loss_fn.evaluate(weights, bias, labels, inputs=inputs, extractor=extractor, keep=keep)
        grad_a, grad_c = terms.grad_extractor

        assert _relative_error(terms.grad_weights, _central_difference(lambda w: total(w=w), weights)) <= 1e-4
        assert _relative_error(terms.grad_bias, _central_difference(lambda b: total(b=b), bias)) <= 1e-4
        assert _relative_error(grad_a, _central_difference(lambda a: total(a=a), np.array(extractor.weights))) <= 1e-4
        assert _relative_error(grad_c, _central_difference(lambda c: total(c=c), np.array(extractor.offsets))) <= 1e-4


def test_final_loss_needs_maps_for_the_diversity_term():
    with pytest.raises(ConfigurationError):
        FinalLoss(beta=0.1).evaluate(np.eye(2), np.zeros(2), np.array([0, 1]), feats=np.eye(2))
    with pytest.raises(ConfigurationError):
        FinalLoss(beta=-1.0)


# =============================================================================
# TRAINER
# =============================================================================


def test_zero_learning_rate_is_the_identity(small_dataset, rng):
    model = _sparse_model(rng, 3, 12)
    config = FinetuneConfig(epochs=2, lr=0.0, extractor_lr=0.0, beta=0.2, batch_size=32)
    extractor = ToyExtractor.identity(12)
    result = FeatureTrainer(config).fit(
        small_dataset.train_maps, small_dataset.train_labels, model, extractor=extractor,
    )

    np.testing.assert_array_equal(result.model.weights, model.weights)
    np.testing.assert_array_equal(result.model.bias, model.bias)
    np.testing.assert_array_equal(result.extractor.weights, extractor.weights)
    assert list(result.curves.columns) == CURVE_COLUMNS
    assert result.curves["epoch"].tolist() == [0, 1, 2]


def test_frozen_support_never_changes(small_dataset, rng):
    """Momentum, dropout, weight decay and L_div all leave the zero pattern intact."""
    model = _sparse_model(rng, 3, 12)
    config = FinetuneConfig(
        epochs=4, lr=0.05, beta=0.3, momentum=0.9, feature_dropout=0.2, weight_decay=1e-3, batch_size=16,
        lr_decay=LrDecay(every=2, factor=0.5),
    )
    stats = standardize(pool_maps(small_dataset.train_maps)).norm_stats
    result = FeatureTrainer(config).fit(small_dataset.train_maps, small_dataset.train_labels, model, norm_stats=stats)

    assert result.model.support == model.support
    assert not np.array_equal(result.model.weights, model.weights)
    assert result.model.meta.stage == "finetuned"


def test_full_batch_descent_is_monotone(small_features):
    """Plain full-batch gradient steps with a small rate never increase the loss."""
    feats, labels = small_features
    config = FinetuneConfig(
        epochs=15, lr=1e-3, momentum=0.0, feature_dropout=0.0, beta=0.0, batch_size=feats.n_samples,
        freeze_support=False,
    )
    result = finetune(feats, labels, SparseLinearModel.zeros(3, feats.n_features), config)
    objective = result.curves["objective"].to_numpy()

    assert np.all(np.diff(objective) <= 1e-12)
    assert objective[-1] < objective[0]
    assert result.extractor is None


def test_training_improves_the_dense_head(small_dataset):
    """The dense stage setup: identity extractor, random head, input statistics."""
    stats = standardize(pool_maps(small_dataset.train_maps)).norm_stats
    config = FinetuneConfig(epochs=5, lr=1e-2, beta=0.196, freeze_support=False, batch_size=16)
    result = FeatureTrainer(config).fit(
        small_dataset.train_maps, small_dataset.train_labels, SparseLinearModel.random(3, 12, seed=0),
        extractor=ToyExtractor.identity(12), norm_stats=stats, stage="dense",
    )
    curves = result.curves

    assert curves["accuracy"].iloc[-1] > curves["accuracy"].iloc[0]
    assert curves["l_div"].iloc[0] < 0
    assert not np.array_equal(result.extractor.weights, np.eye(12))
    assert result.model.meta.stage == "dense"


def test_frozen_extractor_is_not_updated(small_dataset):
    config = FinetuneConfig(epochs=1, beta=0.1, freeze_support=False)
    extractor = ToyExtractor.identity(12, trainable=False)
    result = FeatureTrainer(config).fit(
        small_dataset.train_maps, small_dataset.train_labels, SparseLinearModel.random(3, 12, seed=1), extractor=extractor,
    )
    np.testing.assert_array_equal(result.extractor.weights, np.eye(12))


def test_finetune_is_deterministic_for_a_seed(small_dataset, rng):
    """Same seed, same dropout masks and batch order: bit-identical weights."""
    model = _sparse_model(rng, 3, 12)
    stats = standardize(pool_maps(small_dataset.train_maps)).norm_stats
    config = FinetuneConfig(epochs=3, lr=0.02, beta=0.2, feature_dropout=0.2, batch_size=16, seed=11)

    runs = [
        FeatureTrainer(config).fit(
            small_dataset.train_maps, small_dataset.train_labels, model,
            extractor=ToyExtractor.identity(12), norm_stats=stats,
        )
        for _ in range(2)
    ]
    np.testing.assert_array_equal(runs[0].model.weights, runs[1].model.weights)
    np.testing.assert_array_equal(runs[0].model.bias, runs[1].model.bias)
    np.testing.assert_array_equal(runs[0].extractor.weights, runs[1].extractor.weights)


def test_head_only_fit_separates_separable_data(rng):
    """Two classes split by the sign of feature 0: the head alone reaches >= 99% accuracy."""
    labels = np.arange(200) % 2
    values = rng.normal(0.0, 0.3, size=(200, 4))
    values[:, 0] += np.where(labels == 1, 2.0, -2.0)
    feats = standardize(FeatureMatrix(values))
    config = FinetuneConfig(
        epochs=20, lr=0.1, beta=0.0, feature_dropout=0.0, momentum=0.9, batch_size=20, freeze_support=False,
    )
    result = finetune(feats, LabelVector(labels, 2), SparseLinearModel.zeros(2, 4), config)

    logits = feats.values @ result.model.weights.T + result.model.bias
    assert np.mean(np.argmax(logits, axis=1) == labels) >= 0.99
    assert result.curves["accuracy"].iloc[-1] >= 0.99


def test_trainer_preconditions(small_features):
    feats, labels = small_features
    with pytest.raises(ConfigurationError):
        FeatureTrainer(FinetuneConfig(beta=0.1)).fit(feats, labels, SparseLinearModel.random(3, 12, seed=0))
    with pytest.raises(ConfigurationError):
        FeatureTrainer(FinetuneConfig(beta=0.0)).fit(feats, labels, SparseLinearModel.zeros(3, 12))
    with pytest.raises(ShapeMismatchError):
        FeatureTrainer(FinetuneConfig(beta=0.0, freeze_support=False)).fit(
            feats, labels, SparseLinearModel.random(3, 5, seed=0)
        )
    with pytest.raises(ShapeMismatchError):
        FeatureTrainer(FinetuneConfig(beta=0.0, freeze_support=False)).fit(
            FeatureMatrix(feats.values[:10]), labels, SparseLinearModel.random(3, 12, seed=0)
        )
    with pytest.raises(ConfigurationError):
        FeatureTrainer(FinetuneConfig(beta=0.0, freeze_support=False)).fit(
            feats, LabelVector(labels.labels, 3), SparseLinearModel.random(3, 12, seed=0), extractor=ToyExtractor.identity(12)
        )
