from dataclasses import dataclass

import numpy as np

from src.core.containers import FeatureMapBatch, FeatureMatrix, LabelVector, NormStats, SparseLinearModel
from src.core.ops import SparsityMetrics, accuracy, predict, sparsity_metrics
from src.diversity.metrics import DiversityReport, loc_k
from src.schemas import MetricsConfig


@dataclass(frozen=True)
class StageEvaluation:
    """Test-split scores of one stage's decision layer."""

    stage: str
    accuracy: float
    sparsity: SparsityMetrics
    diversity: DiversityReport | None

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            **self.sparsity.as_dict(),
            "loc_k": None if self.diversity is None else self.diversity.as_dict(),
        }


class ModelEvaluator:
    """Scores decision layers on a split: accuracy, sparsity and loc_k.

    loc_k is computed on the feature maps the stage's layer reads, for the
    predicted class of every example.
    """

    def __init__(self, config: MetricsConfig) -> None:
        self.config: MetricsConfig = config

    def evaluate(
        self,
        stage: str,
        model: SparseLinearModel,
        maps: FeatureMapBatch,
        labels: LabelVector,
        norm_stats: NormStats | None = None,
    ) -> StageEvaluation:
        """Evaluates `model` on the pooled (and standardized) `maps`.

        Args:
            stage (str): Stage tag used in reports.
            model (SparseLinearModel): Decision layer.
            maps (FeatureMapBatch): Feature maps of the split.
            labels (LabelVector): Ground-truth classes.
            norm_stats (NormStats | None): Standardization the layer was fitted with.

        Returns:
            StageEvaluation: Scores; `diversity` is None when k exceeds F.
        """
        pooled = maps.values.mean(axis=(2, 3))
        feats = FeatureMatrix(pooled if norm_stats is None else norm_stats.apply(pooled), normalized=norm_stats is not None)
        logits = predict(model, feats)

        diversity = None
        if self.config.k <= model.n_features:
            diversity = loc_k(maps, model, logits.predicted, k=self.config.k)

        return StageEvaluation(
            stage=stage,
            accuracy=accuracy(logits, labels),
            sparsity=sparsity_metrics(model),
            diversity=diversity,
        )

    @staticmethod
    def flatten(evaluations: list[StageEvaluation]) -> dict[str, float | None]:
        """Per-seed scalar metrics (`<stage>_accuracy`, `<stage>_loc_k`, final sparsity)."""
        flat: dict[str, float | None] = {}
        for item in evaluations:
            flat[f"{item.stage}_accuracy"] = item.accuracy
            flat[f"{item.stage}_loc_k"] = None if item.diversity is None else item.diversity.mean
        if evaluations:
            flat.update(evaluations[-1].sparsity.as_dict())
        return flat

    @staticmethod
    def display(evaluations: list[StageEvaluation]) -> None:
        """Renders a compact terminal table of the stage scores."""
        print("\n" + "═" * 60)
        print("📊 SLDD STAGE METRICS".center(60))
        print("═" * 60)
        print(f"{'stage':<12}{'accuracy':>10}{'n_w':>8}{'n_pc':>8}{'features':>10}{'loc_k':>10}")
        print("─" * 60)
        for item in evaluations:
            loc = "n/a" if item.diversity is None or item.diversity.mean is None else f"{item.diversity.mean:.3f}"
            print(
                f"{item.stage:<12}{item.accuracy:>10.2%}{item.sparsity.n_w:>8d}"
                f"{item.sparsity.n_per_class:>8.2f}{item.sparsity.total_features_used:>10d}{loc:>10}"
            )
        print("═" * 60 + "\n")


def feature_recovery(selected: np.ndarray | list[int], planted: np.ndarray) -> float:
    """Fraction of planted signal features among the selected ones."""
    planted = np.asarray(planted)
    if planted.size == 0:
        return 0.0
    return float(np.isin(planted, np.asarray(selected)).mean())
