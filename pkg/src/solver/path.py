"""Regularization path driver and the sparsity-budget selection rules."""
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
from scipy.special import softmax

from src.core.containers import FeatureMatrix, LabelVector, ModelMeta, SparseLinearModel
from src.core.ops import SparsityMetrics, sparsity_metrics
from src.exceptions import BudgetError, ConfigurationError, DivergenceError
from src.schemas import SolverConfig
from src.solver.prox import ProxSpec
from src.solver.saga import SagaSolver, elastic_objective

# Smallest class frequency used for the intercept-only bias
_MIN_CLASS_FREQUENCY: float = 1e-12


@dataclass(frozen=True)
class PathEntry:
    lambda_: float
    model: SparseLinearModel
    objective: float
    metrics: SparsityMetrics
    epochs: int = 0


@dataclass(frozen=True)
class RegularizationPath:
    """Models ordered by strictly decreasing lambda, each warm-started from the previous."""

    entries: tuple[PathEntry, ...]
    config: SolverConfig
    prox_kind: str = "elementwise"

    def __post_init__(self) -> None:
        lambdas = [e.lambda_ for e in self.entries]
        if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
            raise ConfigurationError("path lambdas must be strictly decreasing")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[PathEntry]:
        return iter(self.entries)

    def __getitem__(self, index: int) -> PathEntry:
        return self.entries[index]

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([e.lambda_ for e in self.entries])


# =============================================================================
# ZERO SOLUTION
# =============================================================================

def intercept_only_model(labels: LabelVector, n_features: int) -> SparseLinearModel:
    """W = 0 with the maximum-likelihood bias (log class frequencies)."""
    counts = np.bincount(labels.labels, minlength=labels.num_classes)
    frequencies = np.maximum(counts / len(labels), _MIN_CLASS_FREQUENCY)
    bias = np.log(frequencies)
    return SparseLinearModel(np.zeros((labels.num_classes, n_features)), bias - bias.mean(), ModelMeta(lambda_=None, stage="intercept"))


def zero_solution_gradient(feats: FeatureMatrix, labels: LabelVector) -> np.ndarray:
    """Gradient of the mean cross-entropy w.r.t. W at the intercept-only model."""
    model = intercept_only_model(labels, feats.n_features)
    residuals = softmax(model.bias)[None, :] - labels.one_hot()
    return residuals.T @ feats.values / feats.n_samples


def lambda_max(feats: FeatureMatrix, labels: LabelVector, alpha: float, prox: ProxSpec = ProxSpec()) -> float:
    """Smallest lambda at which W = 0 is a fixed point of the proximal step.

    Raises:
        ConfigurationError: If alpha is 0 (a pure ridge path never reaches W = 0).
    """
    if alpha <= 0:
        raise ConfigurationError("alpha must be positive to compute lambda_max")
    return prox.zero_threshold(zero_solution_gradient(feats, labels)) / alpha


def lambda_schedule(lambda_max_value: float, config: SolverConfig) -> np.ndarray:
    """Explicit lambdas, or k_steps geometric values from lambda_max to eps_ratio * lambda_max."""
    if config.lambdas is not None:
        base = np.asarray(config.lambdas, dtype=np.float64)
    elif config.k_steps == 1:
        base = np.array([lambda_max_value])
    else:
        base = lambda_max_value * np.geomspace(1.0, config.eps_ratio, config.k_steps)
    return base * config.lambda_scale


# =============================================================================
# PATH
# =============================================================================

def fit_path(
    feats: FeatureMatrix,
    labels: LabelVector,
    config: SolverConfig,
    prox: ProxSpec = ProxSpec(),
    stop_when: Callable[[PathEntry], bool] | None = None,
    verbose: bool = False,
) -> RegularizationPath:
    """Computes the regularization path with warm starts.

    Entries with lambda >= lambda_max are the exact intercept-only solution;
    every other entry is a SAGA fit started from the previous entry.

    Args:
        feats (FeatureMatrix): Standardized features.
        labels (LabelVector): Class labels.
        config (SolverConfig): Solver settings and lambda schedule.
        prox (ProxSpec): Penalty used along the path.
        stop_when (Callable | None): Predicate evaluated after each entry; the
            path ends early once it returns True.
        verbose (bool): Print one line per entry.

    Returns:
        RegularizationPath: Entries in strictly decreasing lambda order.

    Raises:
        DivergenceError: Tagged with the lambda whose fit diverged.
    """
    if not feats.normalized:
        raise ConfigurationError("the regularization path expects standardized features")

    alpha = config.alpha
    lam_max = lambda_max(feats, labels, alpha, prox)
    zero_model = intercept_only_model(labels, feats.n_features)
    previous = zero_model
    entries: list[PathEntry] = []

    for lam in lambda_schedule(lam_max, config):
        lam = float(lam)
        if lam >= lam_max:
            model = zero_model.with_values(lambda_=lam, alpha=alpha, seed=config.seed, stage="path")
            epochs = 0
        else:
            solver = SagaSolver(feats, labels, lam, alpha, config, prox)
            solver.initialize(previous)
            try:
                model = solver.run().with_values(stage="path")
            except DivergenceError as err:
                raise err.at_lambda(lam) from err
            epochs = solver.epochs_run

        entry = PathEntry(
            lambda_=lam,
            model=model,
            objective=elastic_objective(model, feats, labels, lam, alpha, prox.penalty),
            metrics=sparsity_metrics(model),
            epochs=epochs,
        )
        entries.append(entry)
        previous = model
        if verbose:
            print(f"   λ={lam:.4e}  n_w={entry.metrics.n_w:4d}  objective={entry.objective:.5f}  epochs={epochs}")
        if stop_when is not None and stop_when(entry):
            break

    return RegularizationPath(tuple(entries), config, prox.kind)


# =============================================================================
# SPARSITY BUDGETS
# =============================================================================

def sparsify(path: RegularizationPath, budget_select: float = 10, budget_final: float = 5) -> SparseLinearModel:
    """Picks the densest path model within `budget_select` and prunes it to `budget_final`.

    Among entries with the same (largest admissible) n_per_class the one with
    the smallest lambda is taken. Pruning zeros the smallest-|w| nonzeros,
    ties by lowest (class, feature), until n_per_class <= budget_final; the
    bias and surviving weights are untouched.

    Raises:
        ConfigurationError: If the path is empty.
        BudgetError: If no entry satisfies `budget_select`.
    """
    if not path.entries:
        raise ConfigurationError("cannot sparsify an empty path")

    eligible = [e for e in path.entries if e.metrics.n_per_class <= budget_select]
    if not eligible:
        raise BudgetError(budget_select, min(e.metrics.n_per_class for e in path.entries))
    densest = max(e.metrics.n_per_class for e in eligible)
    chosen = [e for e in eligible if e.metrics.n_per_class == densest][-1].model

    weights = chosen.weights.copy()
    max_nonzeros = int(np.floor(budget_final * chosen.n_classes + 1e-9))
    rows, cols = np.nonzero(weights)
    excess = rows.shape[0] - max_nonzeros
    if excess > 0:
        # lexsort: last key is primary
        order = np.lexsort((cols, rows, np.abs(weights[rows, cols])))
        drop = order[:excess]
        weights[rows[drop], cols[drop]] = 0.0
    return chosen.with_values(weights=weights, stage="sparsified")
