import numpy as np
import pytest

from src.core.containers import FeatureMapBatch, SparseLinearModel
from src.diversity.loss import diversity_loss, diversity_loss_grad, scaled_maps, spatial_softmax
from src.diversity.metrics import loc_k, top_k_features
from src.exceptions import ConfigurationError, TieError

EPS = 1e-6


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _central_difference(loss, point: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(point)
    for index in np.ndindex(point.shape):
        plus, minus = point.copy(), point.copy()
        plus[index] += EPS
        minus[index] -= EPS
        grad[index] = (loss(plus) - loss(minus)) / (2 * EPS)
    return grad


def _margin(maps: np.ndarray, model: SparseLinearModel, logits: np.ndarray) -> float:
    """Smallest gap between the two largest candidates of every max the loss takes."""
    gaps = []
    for maps_n, logits_n in zip(maps, logits):
        stack = np.sort(scaled_maps(maps_n, model, logits_n).values, axis=0)
        pooled = np.sort(maps_n.mean(axis=(1, 2)))
        gaps += [float((stack[-1] - stack[-2]).min()), float(pooled[-1] - pooled[-2])]
    return min(gaps)


# =============================================================================
# DIVERSITY LOSS
# =============================================================================


def test_diversity_gradient_matches_finite_differences(rng):
    """100 random non-degenerate points, gradients w.r.t. maps and W.

    The predicted class is held fixed through the logits argument.

    Raises:
        AssertionError: If the relative error exceeds 1e-4.
    """
    checked = 0
    while checked < 100:
        maps = rng.uniform(0.1, 2.0, size=(2, 3, 3, 3))
        weights = rng.normal(0.0, 1.0, size=(3, 3))
        bias = rng.normal(0.0, 0.1, size=3)
        logits = maps.mean(axis=(2, 3)) @ weights.T + bias
        if _margin(maps, SparseLinearModel(weights, bias), logits) < 1e-4:
            continue
        checked += 1
        result = diversity_loss_grad(maps, SparseLinearModel(weights, bias), logits=logits)

        numeric_maps = _central_difference(
            lambda m: diversity_loss_grad(m, SparseLinearModel(weights, bias), logits=logits).loss, maps
        )
        numeric_weights = _central_difference(
            lambda w: diversity_loss_grad(maps, SparseLinearModel(w, bias), logits=logits).loss, weights
        )
        assert _relative_error(result.d_maps, numeric_maps) <= 1e-4
        assert _relative_error(result.d_weights, numeric_weights) <= 1e-4


def test_diversity_weight_gradient_only_touches_predicted_rows(rng):
    maps = rng.uniform(0.1, 1.0, size=(4, 3, 2, 2))
    weights = np.array([[5.0, 1.0, 1.0], [0.1, 0.2, 0.3], [0.1, 0.1, 0.1]])
    model = SparseLinearModel(weights, np.zeros(3))
    result = diversity_loss_grad(maps, model, logits=np.tile([1.0, 0.0, 0.0], (4, 1)))

    assert np.any(result.d_weights[0] != 0)
    assert np.all(result.d_weights[1:] == 0)
    assert result.per_example.shape == (4,)
    assert diversity_loss(maps, model, np.tile([1.0, 0.0, 0.0], (4, 1))) == pytest.approx(result.loss)


def test_diversity_loss_single_feature_is_minus_one():
    """One map: the softmax sums to 1 and both ratios are 1."""
    maps = np.random.default_rng(3).uniform(0.5, 1.5, size=(1, 1, 3, 3))
    model = SparseLinearModel(np.array([[2.0], [-1.0]]), np.zeros(2))
    assert diversity_loss(maps, model) == pytest.approx(-1.0, abs=1e-12)


def test_diversity_loss_of_identical_maps_counts_once():
    """Two identical maps with weights (1, 1): each carries the L2 weight ratio 1/sqrt(2)."""
    weight_ratio = 1.0 / np.sqrt(2.0)
    single = np.random.default_rng(5).uniform(0.5, 1.5, size=(3, 3))
    maps = np.stack([single, single])[None]
    model = SparseLinearModel(np.array([[1.0, 1.0], [0.0, 0.0]]), np.array([1.0, 0.0]))

    assert diversity_loss(maps, model) == pytest.approx(-weight_ratio, abs=1e-12)


def test_diversity_loss_of_disjoint_peaks_adds_up():
    """Point masses on different cells each contribute their full mass."""
    weight_ratio = 1.0 / np.sqrt(2.0)
    maps = np.zeros((1, 2, 2, 2))
    maps[0, 0, 0, 0] = 50.0
    maps[0, 1, 1, 1] = 50.0
    model = SparseLinearModel(np.array([[1.0, 1.0], [0.0, 0.0]]), np.array([1.0, 0.0]))

    assert diversity_loss(maps, model) == pytest.approx(-2.0 * weight_ratio, abs=1e-6)


def test_zero_weight_row_gives_zero_loss_and_gradients(rng):
    maps = rng.uniform(0.1, 2.0, size=(2, 3, 3, 3))
    weights = np.array([[0.0, 0.0, 0.0], [1.0, -2.0, 0.5]])
    model = SparseLinearModel(weights, np.array([100.0, 0.0]))
    result = diversity_loss_grad(maps, model)

    assert result.loss == 0.0
    assert np.all(result.per_example == 0.0)
    assert np.max(np.abs(result.d_maps)) == 0.0
    assert np.max(np.abs(result.d_weights)) == 0.0


def test_scaled_maps_factors():
    """The strongest pooled map has ratio 1 and the class row is normalized to unit length."""
    maps = np.stack([np.full((2, 2), 2.0), np.full((2, 2), 1.0)])
    model = SparseLinearModel(np.array([[3.0, -4.0], [0.0, 1.0]]), np.zeros(2))
    stack = scaled_maps(maps, model, np.array([1.0, 0.0]))

    assert stack.predicted_class == 0 and not stack.tied_prediction
    np.testing.assert_allclose(stack.pooled_ratio, [1.0, 0.5])
    np.testing.assert_allclose(stack.weight_ratio, [0.6, 0.8])
    np.testing.assert_allclose(stack.softmax_maps.sum(axis=(1, 2)), 1.0)
    np.testing.assert_allclose(stack.values[1], 0.25 * 0.5 * 0.8)


def test_strict_mode_reports_ties():
    maps = np.ones((1, 2, 2, 2))
    model = SparseLinearModel(np.eye(2), np.zeros(2))
    with pytest.raises(TieError):
        diversity_loss_grad(maps, model, logits=np.array([[1.0, 1.0]]), strict=True)


# =============================================================================
# loc_k
# =============================================================================


def test_loc_k_stays_within_bounds(rng):
    """1,000 random batches: every per-example value lies in [1/k, 1]."""
    for _ in range(1000):
        k = int(rng.integers(1, 5))
        maps = rng.normal(0.0, 3.0, size=(3, 5, 3, 3))
        model = SparseLinearModel(rng.normal(size=(2, 5)), np.zeros(2))
        report = loc_k(maps, model, rng.integers(0, 2, size=3), k=k)

        assert np.all(report.per_example >= 1.0 / k - 1e-12)
        assert np.all(report.per_example <= 1.0 + 1e-12)


def test_loc_k_attains_both_bounds():
    """Peaks on one shared cell give 1/k; peaks on distinct cells give 1."""
    k = 3
    model = SparseLinearModel(np.ones((1, k)) + np.arange(k), np.zeros(1))

    same = np.zeros((1, k, 3, 3))
    same[0, :, 1, 1] = 1000.0
    assert loc_k(same, model, np.array([0]), k=k).mean == pytest.approx(1.0 / k)

    distinct = np.zeros((1, k, 3, 3))
    for feature in range(k):
        distinct[0, feature, feature, feature] = 1000.0
    assert loc_k(distinct, model, np.array([0]), k=k).mean == pytest.approx(1.0)


def test_loc_k_eligibility_and_aggregates():
    """Examples whose class has fewer than k nonzero weights are left out of the means."""
    model = SparseLinearModel(np.array([[1.0, 2.0, 0.0], [1.0, 0.0, 0.0]]), np.zeros(2))
    maps = FeatureMapBatch(np.zeros((3, 3, 2, 2)))
    report = loc_k(maps, model, np.array([0, 1, 0]), k=2)

    assert report.eligible.tolist() == [True, False, True]
    assert report.mean == pytest.approx(0.5)
    assert report.class_means == {0: pytest.approx(0.5)}
    assert report.as_dict()["n_eligible"] == 2

    assert loc_k(maps, model, np.array([1, 1, 1]), k=2).mean is None
    with pytest.raises(ConfigurationError):
        loc_k(maps, model, np.array([0, 0, 0]), k=4)


def test_top_k_features_is_stable():
    assert top_k_features(np.array([0.5, -2.0, 2.0, 0.1]), 2).tolist() == [1, 2]


def test_spatial_softmax_normalizes_each_map(rng):
    probs = spatial_softmax(rng.normal(size=(2, 3, 4, 5)))
    np.testing.assert_allclose(probs.sum(axis=(2, 3)), 1.0)


def test_spatial_softmax_ignores_per_map_constants(rng):
    maps = rng.normal(size=(2, 3, 4, 5))
    shifts = rng.uniform(-10.0, 10.0, size=(2, 3, 1, 1))
    np.testing.assert_allclose(spatial_softmax(maps + shifts), spatial_softmax(maps), rtol=0.0, atol=1e-9)


def test_shifted_map_keeps_softmax_but_moves_pooled_ratio():
    """A constant added to a map leaves its softmax alone; only the pooled ratio sees it.

    With a single map the pooled ratio stays 1, so the loss and its map
    gradient are unchanged.
    """
    base = np.random.default_rng(11).uniform(0.5, 1.5, size=(1, 1, 3, 3))
    model = SparseLinearModel(np.array([[1.0], [0.0]]), np.array([1.0, 0.0]))
    before = diversity_loss_grad(base, model)
    after = diversity_loss_grad(base + 4.0, model)
    assert abs(after.loss - before.loss) <= 1e-9
    np.testing.assert_allclose(after.d_maps, before.d_maps, rtol=0.0, atol=1e-9)

    maps = np.stack([np.full((2, 2), 2.0), np.full((2, 2), 1.0)])
    two = SparseLinearModel(np.array([[1.0, 1.0], [0.0, 0.0]]), np.zeros(2))
    logits = np.array([1.0, 0.0])
    shifted = maps + np.array([0.0, 0.5])[:, None, None]
    plain, moved = scaled_maps(maps, two, logits), scaled_maps(shifted, two, logits)
    np.testing.assert_allclose(moved.softmax_maps, plain.softmax_maps, atol=1e-12)
    np.testing.assert_allclose(plain.pooled_ratio, [1.0, 0.5])
    np.testing.assert_allclose(moved.pooled_ratio, [1.0, 0.75])
