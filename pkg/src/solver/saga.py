"""Minibatch SAGA for elastic-net multinomial logistic regression.

The stored table holds, per example, the length-C logit gradient
r_i = softmax(W x_i + b) - onehot(y_i); the gradient contribution of
example i is the outer product r_i x_i^T.
"""
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import logsumexp, softmax

from src.core.containers import FeatureMatrix, LabelVector, ModelMeta, SparseLinearModel
from src.exceptions import ConfigurationError, DivergenceError, ShapeMismatchError
from src.schemas import SolverConfig
from src.solver.prox import ProxSpec


# =============================================================================
# OBJECTIVE
# =============================================================================

def mean_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    log_norm = logsumexp(logits, axis=1)
    return float(np.mean(log_norm - logits[np.arange(logits.shape[0]), labels]))


def penalty_value(
    weights: np.ndarray,
    lambda_: float,
    alpha: float,
    penalty: Literal["elementwise", "group"] = "elementwise",
) -> float:
    ridge = 0.5 * float(np.sum(weights**2))
    if penalty == "elementwise":
        sparse_term = float(np.sum(np.abs(weights)))
    else:
        sparse_term = float(np.sum(np.linalg.norm(weights, axis=0)))
    return lambda_ * ((1.0 - alpha) * ridge + alpha * sparse_term)


def elastic_objective(
    model: SparseLinearModel,
    feats: FeatureMatrix,
    labels: LabelVector,
    lambda_: float,
    alpha: float,
    penalty: Literal["elementwise", "group"] = "elementwise",
) -> float:
    """Mean cross-entropy plus the elastic-net penalty (bias unpenalized).

    The elementwise penalty is lambda[(1-alpha) 1/2 ||W||_F^2 + alpha ||W||_1,1];
    the group penalty replaces the l1 term with the sum of column norms.
    """
    _check_shapes(model.n_features, model.n_classes, feats, labels)
    logits = feats.values @ model.weights.T + model.bias
    return mean_cross_entropy(logits, labels.labels) + penalty_value(model.weights, lambda_, alpha, penalty)


def _check_shapes(n_features: int, n_classes: int, feats: FeatureMatrix, labels: LabelVector) -> None:
    if feats.n_features != n_features:
        raise ShapeMismatchError(f"model expects {n_features} features, got {feats.n_features}")
    if labels.num_classes != n_classes:
        raise ShapeMismatchError(f"model has {n_classes} classes, labels declare {labels.num_classes}")
    if feats.n_samples != len(labels):
        raise ShapeMismatchError("features and labels disagree on the number of examples")


# =============================================================================
# STEP SIZE
# =============================================================================

def auto_step_size(features: np.ndarray, batch_size: int, step_scale: float) -> float:
    """step_scale / L_B with L_B the minibatch expected smoothness of the data.

    L_B interpolates between the largest squared row norm (batch of one) and
    the full-data constant ||X||_2^2 / N (full batch); rows carry an extra
    bias coordinate.
    """
    n = features.shape[0]
    augmented = np.hstack([features, np.ones((n, 1))])
    l_max = float(np.max(np.sum(augmented**2, axis=1)))
    if n == 1:
        return step_scale / l_max
    l_full = float(np.linalg.norm(augmented, 2) ** 2 / n)
    b = min(batch_size, n)
    smoothness = (n - b) / (b * (n - 1)) * l_max + n * (b - 1) / (b * (n - 1)) * l_full
    return step_scale / smoothness


# =============================================================================
# SOLVER
# =============================================================================

@dataclass
class SagaState:
    """Residual table and its running averages (mutable, owned by one solver)."""

    residuals: np.ndarray
    grad_avg: np.ndarray
    grad0_avg: np.ndarray

    def recompute(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Averages recomputed from the table, for consistency checks."""
        n = features.shape[0]
        return self.residuals.T @ features / n, self.residuals.mean(axis=0)


class SagaSolver:
    """Variance-reduced proximal SGD over fixed, standardized features.

    Each update draws a minibatch B, replaces the stored residuals of B and
    moves W by gamma (g - g' + g_avg) before applying the proximal operator;
    the bias follows the same rule without a prox.
    """

    def __init__(
        self,
        feats: FeatureMatrix,
        labels: LabelVector,
        lambda_: float,
        alpha: float,
        config: SolverConfig,
        prox: ProxSpec = ProxSpec(),
    ) -> None:
        if not feats.normalized:
            raise ConfigurationError("the solver expects standardized features")
        if lambda_ < 0 or not 0.0 <= alpha <= 1.0:
            raise ConfigurationError(f"invalid regularization lambda={lambda_}, alpha={alpha}")
        if feats.n_samples != len(labels):
            raise ShapeMismatchError("features and labels disagree on the number of examples")

        self.features: np.ndarray = feats.values
        self.labels: LabelVector = labels
        self.targets: np.ndarray = labels.one_hot()
        self.lambda_: float = lambda_
        self.alpha: float = alpha
        self.config: SolverConfig = config
        self.prox: ProxSpec = prox
        self.step_size: float = config.learning_rate or auto_step_size(
            self.features, config.batch_size, config.step_scale
        )
        self.lambda1: float = self.step_size * lambda_ * alpha
        self.lambda2: float = self.step_size * lambda_ * (1.0 - alpha)
        self.rng: np.random.Generator = np.random.default_rng(config.seed)

        self.weights: np.ndarray | None = None
        self.bias: np.ndarray | None = None
        self.state: SagaState | None = None
        self.history: list[float] = []
        self.best_objective: float | None = None
        self.n_updates: int = 0
        self.epochs_run: int = 0

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    def _residuals(self, rows: np.ndarray | slice) -> np.ndarray:
        logits = self.features[rows] @ self.weights.T + self.bias
        return softmax(logits, axis=1) - self.targets[rows]

    def initialize(self, warm_start: SparseLinearModel | None = None) -> None:
        """Sets the starting point and fills the table with its residuals."""
        n_classes, n_features = self.labels.num_classes, self.features.shape[1]
        if warm_start is None:
            self.weights = np.zeros((n_classes, n_features))
            self.bias = np.zeros(n_classes)
        else:
            if warm_start.weights.shape != (n_classes, n_features):
                raise ShapeMismatchError(f"warm start has shape {warm_start.weights.shape}")
            self.weights = warm_start.weights.copy()
            self.bias = warm_start.bias.copy()

        residuals = self._residuals(slice(None))
        self.state = SagaState(
            residuals=residuals,
            grad_avg=residuals.T @ self.features / self.n_samples,
            grad0_avg=residuals.mean(axis=0),
        )
        self.history = []
        self.n_updates = 0
        self.epochs_run = 0

    def step(self, batch: np.ndarray) -> None:
        """One SAGA update on the examples in `batch`."""
        batch = np.asarray(batch)
        size = batch.shape[0]
        x_batch = self.features[batch]

        new_residuals = self._residuals(batch)
        delta = new_residuals - self.state.residuals[batch]
        grad_diff = delta.T @ x_batch / size
        grad0_diff = delta.mean(axis=0)

        self.weights = self.weights - self.step_size * (grad_diff + self.state.grad_avg)
        self.bias = self.bias - self.step_size * (grad0_diff + self.state.grad0_avg)
        self.weights = self.prox.apply(self.weights, self.lambda1, self.lambda2)

        # Table update
        self.state.residuals[batch] = new_residuals
        self.state.grad_avg += (size / self.n_samples) * grad_diff
        self.state.grad0_avg += (size / self.n_samples) * grad0_diff
        self.n_updates += 1

    def objective(self) -> float:
        logits = self.features @ self.weights.T + self.bias
        with np.errstate(over="ignore", invalid="ignore"):
            value = mean_cross_entropy(logits, self.labels.labels)
        return value + penalty_value(self.weights, self.lambda_, self.alpha, self.prox.penalty)

    def run(self) -> SparseLinearModel:
        """Runs epochs until the lookbehind rule or `max_epochs` stops the fit.

        Returns the best epoch-end iterate (the starting point counts as
        epoch 0) with entries below `zero_clip_tol` zeroed.

        Raises:
            DivergenceError: If the objective becomes non-finite.
        """
        if self.state is None:
            self.initialize()

        config = self.config
        best_objective = self.objective()
        if not np.isfinite(best_objective):
            raise DivergenceError(float("nan"), 0, self.lambda_)
        best = (self.weights.copy(), self.bias.copy())
        self.history = [best_objective]
        stall = 0

        for epoch in range(1, config.max_epochs + 1):
            order = self.rng.permutation(self.n_samples)
            for start in range(0, self.n_samples, config.batch_size):
                self.step(order[start:start + config.batch_size])

            objective = self.objective()
            if not np.isfinite(objective):
                raise DivergenceError(self.history[-1], self.n_updates, self.lambda_)
            self.history.append(objective)
            self.epochs_run = epoch

            # Lookbehind: progress must beat the best objective by a relative margin
            if objective < best_objective - config.tol * max(1.0, abs(best_objective)):
                stall = 0
            else:
                stall += 1
            if objective < best_objective:
                best_objective = objective
                best = (self.weights.copy(), self.bias.copy())
            if stall >= config.lookbehind:
                break

        weights, bias = best
        weights[np.abs(weights) < config.zero_clip_tol] = 0.0
        self.best_objective = best_objective
        return SparseLinearModel(
            weights, bias, ModelMeta(lambda_=self.lambda_, alpha=self.alpha, seed=config.seed, stage="saga")
        )


def saga_fit(
    feats: FeatureMatrix,
    labels: LabelVector,
    lambda_: float,
    alpha: float,
    config: SolverConfig,
    warm_start: SparseLinearModel | None = None,
    prox: ProxSpec = ProxSpec(),
) -> SparseLinearModel:
    """Fits one elastic-net model with minibatch SAGA.

    Args:
        feats (FeatureMatrix): Standardized training features.
        labels (LabelVector): Class labels.
        lambda_ (float): Regularization strength.
        alpha (float): Elastic-net mixing weight.
        config (SolverConfig): Step, batching, stopping and seed settings.
        warm_start (SparseLinearModel | None): Starting point (zeros if None).
        prox (ProxSpec): Elementwise, group or gated penalty.

    Returns:
        SparseLinearModel: The fitted model.
    """
    solver = SagaSolver(feats, labels, lambda_, alpha, config, prox)
    solver.initialize(warm_start)
    return solver.run()
