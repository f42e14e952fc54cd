import numpy as np
import pytest
from scipy.special import softmax

from src.core.containers import ModelMeta, SparseLinearModel
from src.core.ops import pool_maps, sparsity_metrics
from src.exceptions import BudgetError, ConfigurationError
from src.schemas import SolverConfig
from src.solver.path import (
    PathEntry,
    RegularizationPath,
    fit_path,
    intercept_only_model,
    lambda_max,
    lambda_schedule,
    sparsify,
)


def _entry(lambda_: float, weights: np.ndarray) -> PathEntry:
    model = SparseLinearModel(weights, np.zeros(weights.shape[0]), ModelMeta(lambda_=lambda_))
    return PathEntry(lambda_, model, objective=1.0, metrics=sparsity_metrics(model))


def _path(*entries: PathEntry) -> RegularizationPath:
    return RegularizationPath(tuple(entries), SolverConfig())


# =============================================================================
# PATH
# =============================================================================


def test_path_starts_at_the_intercept_only_model(small_features):
    """The lambda_max entry is exactly zero and the lambdas strictly decrease.

    Raises:
        AssertionError: If the first model has any nonzero weight.
    """
    feats, labels = small_features
    config = SolverConfig(k_steps=61, max_epochs=100, batch_size=16, seed=0)
    path = fit_path(feats, labels, config)

    assert len(path) == 61
    assert path[0].lambda_ == pytest.approx(lambda_max(feats, labels, config.alpha))
    assert path[0].metrics.n_w == 0 and path[0].epochs == 0
    np.testing.assert_allclose(softmax(path[0].model.bias), np.bincount(labels.labels) / len(labels))
    assert np.all(np.diff(path.lambdas) < 0)

    counts = [e.metrics.n_w for e in path]
    non_decreasing = np.mean([b >= a for a, b in zip(counts, counts[1:])])
    assert non_decreasing >= 0.95
    assert counts[-1] > 0


def test_entries_above_lambda_max_are_exact(small_features):
    feats, labels = small_features
    lam_max = lambda_max(feats, labels, 0.99)
    config = SolverConfig(lambdas=[3.0 * lam_max, 1.5 * lam_max], max_epochs=5)
    path = fit_path(feats, labels, config)

    for entry in path:
        assert entry.metrics.n_w == 0
        assert entry.epochs == 0
        np.testing.assert_array_equal(entry.model.bias, intercept_only_model(labels, feats.n_features).bias)


def test_stop_when_ends_the_path_early(small_features):
    feats, labels = small_features
    config = SolverConfig(k_steps=30, max_epochs=20, batch_size=16)
    path = fit_path(feats, labels, config, stop_when=lambda entry: entry.metrics.n_w > 0)

    assert path[-1].metrics.n_w > 0
    assert all(e.metrics.n_w == 0 for e in path.entries[:-1])
    assert len(path) < 30


def test_lambda_schedule():
    """Geometric from lambda_max to eps_ratio * lambda_max, then scaled."""
    schedule = lambda_schedule(2.0, SolverConfig(k_steps=5, eps_ratio=1e-2, lambda_scale=0.1))
    np.testing.assert_allclose(schedule, 0.1 * 2.0 * np.geomspace(1.0, 1e-2, 5))

    assert lambda_schedule(2.0, SolverConfig(k_steps=1)).tolist() == [2.0]
    assert lambda_schedule(2.0, SolverConfig(lambdas=[0.5, 0.25])).tolist() == [0.5, 0.25]


def test_lambda_max_needs_positive_alpha(small_features):
    feats, labels = small_features
    with pytest.raises(ConfigurationError):
        lambda_max(feats, labels, 0.0)


def test_path_requires_standardized_features(small_dataset):
    with pytest.raises(ConfigurationError):
        fit_path(pool_maps(small_dataset.train_maps), small_dataset.train_labels, SolverConfig(k_steps=2))


def test_path_rejects_unordered_lambdas():
    zero = np.zeros((2, 2))
    with pytest.raises(ConfigurationError):
        _path(_entry(0.5, zero), _entry(0.5, zero))


# =============================================================================
# SPARSITY BUDGETS
# =============================================================================


def test_sparsify_matches_sort_oracle(rng):
    """The removed entries are exactly the smallest |w| nonzeros.

    Raises:
        AssertionError: If pruning keeps a smaller weight than one it removed.
    """
    dense = rng.normal(size=(3, 10))
    sparse = dense * (rng.random((3, 10)) < 0.2)
    path = _path(_entry(1.0, np.zeros((3, 10))), _entry(0.5, sparse), _entry(0.1, dense))

    budget_select = np.count_nonzero(dense) / 3
    model = sparsify(path, budget_select=budget_select, budget_final=5)

    assert sparsity_metrics(model).n_per_class <= 5
    assert np.count_nonzero(model.weights) == 15

    rows, cols = np.nonzero(dense)
    order = sorted(zip(np.abs(dense[rows, cols]), rows, cols))
    removed = {(int(r), int(c)) for _, r, c in order[: rows.shape[0] - 15]}
    assert removed == set(zip(*np.nonzero(dense))) - set(zip(*np.nonzero(model.weights)))
    survivors = model.weights != 0
    np.testing.assert_array_equal(model.weights[survivors], dense[survivors])
    assert model.meta.stage == "sparsified"


def test_sparsify_picks_densest_admissible_entry_with_smallest_lambda():
    one = np.array([[1.0, 0.0], [0.0, 1.0]])
    also_one = np.array([[2.0, 0.0], [0.0, 2.0]])
    too_dense = np.ones((2, 2))
    path = _path(_entry(1.0, np.zeros((2, 2))), _entry(0.5, one), _entry(0.4, also_one), _entry(0.1, too_dense))

    model = sparsify(path, budget_select=1, budget_final=1)
    np.testing.assert_array_equal(model.weights, also_one)
    assert model.meta.lambda_ == 0.4


def test_sparsify_pruning_ties_drop_lowest_index_first():
    weights = np.array([[1.0, 1.0], [1.0, 3.0]])
    path = _path(_entry(1.0, weights))
    model = sparsify(path, budget_select=2, budget_final=1)

    np.testing.assert_array_equal(model.weights, [[0.0, 0.0], [1.0, 3.0]])


def test_sparsify_budget_errors():
    path = _path(_entry(1.0, np.ones((2, 4))))
    with pytest.raises(BudgetError) as err:
        sparsify(path, budget_select=2, budget_final=1)
    assert err.value.smallest_n_per_class == 4

    with pytest.raises(ConfigurationError):
        sparsify(_path(), budget_select=2, budget_final=1)
