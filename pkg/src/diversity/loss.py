"""Feature diversity loss over class-weighted, spatially softmaxed feature maps.

For one example with predicted class c:
    s_hat[l] = softmax_ij(M[l]) * (f_l / max_m f_m) * (|w_cl| / ||w_c||)
    L_div   = - sum_ij max_l s_hat[l, i, j]
where f is the average-pooled map vector. Batches reduce by the mean.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from src.core.containers import FeatureMapBatch, SparseLinearModel
from src.exceptions import ShapeMismatchError, TieError


@dataclass(frozen=True)
class ScaledMapStack:
    """Scaled maps of one example and the factors that produced them.

    Attributes:
        values (np.ndarray): F x H x W scaled maps.
        softmax_maps (np.ndarray): F x H x W spatial softmax (each sums to 1).
        pooled_ratio (np.ndarray): f_l / max_m f_m (0 when the max is 0).
        weight_ratio (np.ndarray): |w_cl| / ||w_c|| (0 when the row is zero).
        predicted_class (int): Argmax class, lowest index on ties.
        tied_prediction (bool): Whether several classes share the max logit.
    """

    values: np.ndarray
    softmax_maps: np.ndarray
    pooled_ratio: np.ndarray
    weight_ratio: np.ndarray
    predicted_class: int
    tied_prediction: bool = False


@dataclass(frozen=True)
class DiversityGradient:
    loss: float
    per_example: np.ndarray
    d_maps: np.ndarray
    d_weights: np.ndarray


# =============================================================================
# FACTORS (vectorized over the batch)
# =============================================================================

def spatial_softmax(maps: np.ndarray) -> np.ndarray:
    """Softmax over the two trailing spatial axes."""
    flat = maps.reshape(*maps.shape[:-2], -1)
    return softmax(flat, axis=-1).reshape(maps.shape)


def _ratios(pooled: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pooled ratio per example plus the argmax index and max value."""
    top = np.argmax(pooled, axis=1)
    f_max = pooled[np.arange(pooled.shape[0]), top]
    ratio = np.zeros_like(pooled)
    nonzero = f_max != 0
    ratio[nonzero] = pooled[nonzero] / f_max[nonzero, None]
    return ratio, top, f_max


def _weight_ratios(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(rows, axis=1)
    ratio = np.zeros_like(rows)
    nonzero = norms > 0
    ratio[nonzero] = np.abs(rows[nonzero]) / norms[nonzero, None]
    return ratio, norms


def _check_model(maps: np.ndarray, model: SparseLinearModel) -> None:
    if maps.shape[1] != model.n_features:
        raise ShapeMismatchError(f"model expects {model.n_features} feature maps, got {maps.shape[1]}")


# =============================================================================
# OPERATIONS
# =============================================================================

def scaled_maps(maps_n: np.ndarray, model: SparseLinearModel, logits_n: np.ndarray) -> ScaledMapStack:
    """Builds the scaled map stack of one example (F x H x W)."""
    maps_n = np.asarray(maps_n, dtype=np.float64)
    if maps_n.ndim != 3:
        raise ShapeMismatchError(f"expected F x H x W maps, got shape {maps_n.shape}")
    _check_model(maps_n[None], model)
    logits_n = np.asarray(logits_n, dtype=np.float64).reshape(-1)

    predicted = int(np.argmax(logits_n))
    tied = int(np.sum(logits_n == logits_n[predicted])) > 1
    probs = spatial_softmax(maps_n)
    pooled_ratio, _, _ = _ratios(maps_n.mean(axis=(1, 2))[None])
    weight_ratio, _ = _weight_ratios(model.weights[predicted][None])
    scale = pooled_ratio[0] * weight_ratio[0]
    return ScaledMapStack(
        values=probs * scale[:, None, None],
        softmax_maps=probs,
        pooled_ratio=pooled_ratio[0],
        weight_ratio=weight_ratio[0],
        predicted_class=predicted,
        tied_prediction=tied,
    )


def diversity_loss_grad(
    maps: FeatureMapBatch | np.ndarray,
    model: SparseLinearModel,
    logits: np.ndarray | None = None,
    strict: bool = False,
) -> DiversityGradient:
    """Batch-mean diversity loss and its analytic gradients.

    The predicted class is treated as a constant; each max routes its
    gradient to the attaining element (lowest index on ties).

    Args:
        maps (FeatureMapBatch | np.ndarray): N x F x H x W maps.
        model (SparseLinearModel): Decision layer (provides W and b).
        logits (np.ndarray | None): Logits defining the predicted class;
            computed from the pooled maps when omitted.
        strict (bool): Raise on ties in the channel max, the pooled max or
            the predicted class instead of routing to the lowest index.

    Returns:
        DiversityGradient: Loss, per-example losses, d/d maps (N x F x H x W)
            and d/d W (C x F, nonzero only on predicted-class rows).

    Raises:
        TieError: In strict mode, listing the tied positions.
    """
    maps = maps.values if isinstance(maps, FeatureMapBatch) else np.asarray(maps, dtype=np.float64)
    _check_model(maps, model)
    weights = model.weights
    n, n_features, height, width = maps.shape
    cells = height * width

    pooled = maps.mean(axis=(2, 3))
    if logits is None:
        logits = pooled @ weights.T + model.bias
    predicted = np.argmax(logits, axis=1)

    probs = spatial_softmax(maps).reshape(n, n_features, cells)
    pooled_ratio, top, f_max = _ratios(pooled)
    rows = weights[predicted]
    weight_ratio, row_norms = _weight_ratios(rows)
    scale = pooled_ratio * weight_ratio
    scaled = probs * scale[:, :, None]

    winner = np.argmax(scaled, axis=1)
    if strict:
        _raise_on_ties(logits, pooled, scaled, winner)

    chosen = np.take_along_axis(scaled, winner[:, None, :], axis=1)[:, 0, :]
    per_example = -chosen.sum(axis=1)

    # d per_example / d scaled: -1 at the winning channel of each cell
    routed = winner[:, None, :] == np.arange(n_features)[None, :, None]
    grad_probs = -(routed * scale[:, :, None])
    mass = (routed * probs).sum(axis=2)
    grad_pooled_ratio = -mass * weight_ratio
    grad_weight_ratio = -mass * pooled_ratio

    # Spatial softmax backward
    d_maps = probs * (grad_probs - np.sum(grad_probs * probs, axis=2, keepdims=True))

    # Pooled ratio f_l / f_max (zero where f_max == 0)
    grad_pooled = np.zeros_like(pooled)
    live = f_max != 0
    grad_pooled[live] = grad_pooled_ratio[live] / f_max[live, None]
    correction = np.sum(grad_pooled_ratio * pooled, axis=1)
    grad_pooled[live, top[live]] -= correction[live] / f_max[live] ** 2
    d_maps += grad_pooled[:, :, None] / cells

    # Weight ratio |w_l| / ||w|| (zero where the row is zero)
    d_rows = np.zeros_like(rows)
    alive = row_norms > 0
    inner = np.sum(grad_weight_ratio * np.abs(rows), axis=1)
    d_rows[alive] = (
        grad_weight_ratio[alive] * np.sign(rows[alive]) / row_norms[alive, None]
        - inner[alive, None] * rows[alive] / row_norms[alive, None] ** 3
    )
    d_weights = np.zeros_like(weights)
    np.add.at(d_weights, predicted, d_rows)

    return DiversityGradient(
        loss=float(per_example.mean()),
        per_example=per_example,
        d_maps=d_maps.reshape(maps.shape) / n,
        d_weights=d_weights / n,
    )


def diversity_loss(maps: FeatureMapBatch | np.ndarray, model: SparseLinearModel, logits: np.ndarray | None = None) -> float:
    """Batch mean of L_div; see `diversity_loss_grad` for per-example values."""
    return diversity_loss_grad(maps, model, logits).loss


def _raise_on_ties(logits: np.ndarray, pooled: np.ndarray, scaled: np.ndarray, winner: np.ndarray) -> None:
    top_logits = logits.max(axis=1, keepdims=True)
    tied = np.flatnonzero(np.sum(logits == top_logits, axis=1) > 1)
    if tied.size:
        raise TieError("predicted class", tied.tolist())

    top_pooled = pooled.max(axis=1, keepdims=True)
    tied = np.flatnonzero(np.sum(pooled == top_pooled, axis=1) > 1)
    if tied.size:
        raise TieError("pooled feature maximum", tied.tolist())

    best = np.take_along_axis(scaled, winner[:, None, :], axis=1)
    counts = np.sum(scaled == best, axis=1)
    tied_cells = np.argwhere((counts > 1) & (best[:, 0, :] != 0))
    if tied_cells.size:
        raise TieError("cross-channel maximum", [tuple(int(v) for v in cell) for cell in tied_cells])
