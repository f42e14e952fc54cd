"""Proximal operators of the elastic-net penalties.

With step gamma, strength lambda and mixing alpha the solver calls these with
lambda1 = gamma * lambda * alpha and lambda2 = gamma * lambda * (1 - alpha).
"""
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

ProxKind = Literal["elementwise", "group", "gated"]


def prox_elementwise(beta, lambda1: float, lambda2: float):
    """Soft-thresholding followed by ridge shrinkage.

    Solves argmin_z 1/2 (z - beta)^2 + lambda1 |z| + lambda2/2 z^2 entrywise.

    Args:
        beta (float | np.ndarray): Point(s) to shrink.
        lambda1 (float): l1 threshold (>= 0).
        lambda2 (float): l2 shrinkage (>= 0).

    Returns:
        float | np.ndarray: Same shape as `beta`.
    """
    beta_arr = np.asarray(beta, dtype=np.float64)
    out = np.sign(beta_arr) * np.maximum(np.abs(beta_arr) - lambda1, 0.0) / (1.0 + lambda2)
    return float(out) if out.ndim == 0 else out


def _column_factors(norms: np.ndarray, lambda1: float, lambda2: float) -> np.ndarray:
    keep = norms > lambda1
    factors = np.zeros_like(norms)
    factors[keep] = (norms[keep] - lambda1) / ((1.0 + lambda2) * norms[keep])
    return factors


def prox_group(weights: np.ndarray, lambda1: float, lambda2: float) -> np.ndarray:
    """Group shrinkage of every feature column w_l = W[:, l].

    Columns with ||w_l|| <= lambda1 are zeroed, the others scaled by
    (||w_l|| - lambda1) / ((1 + lambda2) ||w_l||).
    """
    weights = np.asarray(weights, dtype=np.float64)
    norms = np.linalg.norm(weights, axis=0)
    return weights * _column_factors(norms, lambda1, lambda2)


def gate_mask(norms: np.ndarray, selected: np.ndarray) -> np.ndarray:
    """Columns allowed through the gate: selected ones plus the single max-norm candidate.

    Equal maxima resolve to the lowest feature index.
    """
    allowed = selected.copy()
    candidates = np.flatnonzero(~selected)
    if candidates.size:
        allowed[candidates[np.argmax(norms[candidates])]] = True
    return allowed


def prox_group_gated(weights: np.ndarray, lambda1: float, lambda2: float, selected) -> np.ndarray:
    """Group prox restricted to already selected features plus one new candidate.

    A column survives (scaled as in `prox_group`) iff its norm exceeds
    lambda1 and it is either selected or the maximum-norm unselected column,
    so at most one feature outside `selected` is ever nonzero.

    Args:
        weights (np.ndarray): C x F matrix.
        lambda1 (float): Group threshold.
        lambda2 (float): Ridge shrinkage.
        selected (Iterable[int]): Indices of already selected features.

    Returns:
        np.ndarray: The shrunk C x F matrix.
    """
    weights = np.asarray(weights, dtype=np.float64)
    norms = np.linalg.norm(weights, axis=0)
    mask = np.zeros(weights.shape[1], dtype=bool)
    mask[np.fromiter(selected, dtype=np.int64)] = True
    factors = _column_factors(norms, lambda1, lambda2) * gate_mask(norms, mask)
    return weights * factors


@dataclass(frozen=True)
class ProxSpec:
    """Which penalty the solver uses, with the selected set for the gated variant."""

    kind: ProxKind = "elementwise"
    selected: frozenset[int] = field(default_factory=frozenset)

    @classmethod
    def gated(cls, selected) -> "ProxSpec":
        return cls("gated", frozenset(int(i) for i in selected))

    @property
    def penalty(self) -> Literal["elementwise", "group"]:
        return "elementwise" if self.kind == "elementwise" else "group"

    def apply(self, weights: np.ndarray, lambda1: float, lambda2: float) -> np.ndarray:
        if self.kind == "elementwise":
            return prox_elementwise(weights, lambda1, lambda2)
        if self.kind == "group":
            return prox_group(weights, lambda1, lambda2)
        return prox_group_gated(weights, lambda1, lambda2, self.selected)

    def zero_threshold(self, gradient: np.ndarray) -> float:
        """Largest entry (or column norm) of the gradient at W = 0."""
        if self.kind == "elementwise":
            return float(np.max(np.abs(gradient)))
        return float(np.max(np.linalg.norm(gradient, axis=0)))
