from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.config import ARTIFACTS_DIR, RANDOM_SEED
from src.exceptions import ArtifactError, ConfigurationError


class _Config(BaseModel):
    """Common behaviour: immutable, unknown keys rejected."""

    model_config = ConfigDict(frozen=True, extra="forbid")


# =============================================================================
# SOLVER (regularization path, SAGA)
# =============================================================================

class SolverConfig(_Config):
    """Elastic-net SAGA solver and lambda schedule.

    The schedule is either geometric (`k_steps` values from lambda_max down to
    `eps_ratio * lambda_max`) or the explicit `lambdas` list. Every value is
    multiplied by `lambda_scale`.
    """

    alpha: float = Field(0.99, ge=0.0, le=1.0)
    k_steps: int = Field(50, ge=1)
    eps_ratio: float = Field(1e-4, gt=0.0, lt=1.0)
    lambdas: list[float] | None = None
    lambda_scale: float = Field(1.0, gt=0.0)
    learning_rate: float | None = Field(None, gt=0.0)
    step_scale: float = Field(0.1, gt=0.0)
    batch_size: int = Field(32, ge=1)
    max_epochs: int = Field(100, ge=1)
    lookbehind: int = Field(5, ge=1)
    tol: float = Field(1e-5, ge=0.0)
    zero_clip_tol: float = Field(1e-8, ge=0.0)
    seed: int = Field(RANDOM_SEED, ge=0)

    @field_validator("lambdas")
    @classmethod
    def _strictly_decreasing(cls, value: list[float] | None) -> list[float] | None:
        if value is None:
            return value
        if not value or any(v <= 0 for v in value):
            raise ValueError("explicit lambdas must be a nonempty list of positive values")
        if any(b >= a for a, b in zip(value, value[1:])):
            raise ValueError("explicit lambdas must be strictly decreasing")
        return value


class SelectionConfig(_Config):
    """Gated group-lasso feature selection: its own alpha and a reduced lambda scale."""

    n_target: int = Field(20, ge=1)
    alpha: float = Field(0.8, gt=0.0, le=1.0)
    lambda_scale: float = Field(0.1, gt=0.0)


class SparsifyConfig(_Config):
    budget_select: float = Field(10.0, gt=0.0)
    budget_final: float = Field(5.0, gt=0.0)

    @model_validator(mode="after")
    def _ordered(self) -> "SparsifyConfig":
        if self.budget_final > self.budget_select:
            raise ValueError("budget_final must not exceed budget_select")
        return self


# =============================================================================
# TRAINING (dense stage and sparse finetuning)
# =============================================================================

class LrDecay(_Config):
    every: int = Field(10, ge=1)
    factor: float = Field(0.4, gt=0.0, le=1.0)


class FinetuneConfig(_Config):
    """Masked SGD on L_CE + beta * L_div.

    `factor` in `lr_decay` is the retained fraction of the learning rate.
    `extractor_lr` defaults to half the head learning rate.
    """

    beta: float = Field(0.196, ge=0.0)
    epochs: int = Field(40, ge=0)
    lr: float = Field(1e-2, ge=0.0)
    extractor_lr: float | None = Field(None, ge=0.0)
    lr_decay: LrDecay = LrDecay()
    momentum: float = Field(0.95, ge=0.0, lt=1.0)
    feature_dropout: float = Field(0.1, ge=0.0, lt=1.0)
    weight_decay: float = Field(0.0, ge=0.0)
    batch_size: int = Field(16, ge=1)
    seed: int = Field(RANDOM_SEED, ge=0)
    freeze_support: bool = True

    @property
    def effective_extractor_lr(self) -> float:
        return self.lr / 2 if self.extractor_lr is None else self.extractor_lr


# =============================================================================
# EVALUATION
# =============================================================================

class MetricsConfig(_Config):
    k: int = Field(5, ge=1)
    alignment_threshold: float = 0.2
    alignment_stage: Literal["finetuned", "dense"] = "finetuned"


class PatchSchedule(_Config):
    """Square patch sizes for masking-based localization.

    Gaussian blur uses sigma = sigma_ratio * p, truncated at `truncate` sigmas.
    """

    sizes: list[int] = Field(default_factory=lambda: [28, 56, 64, 112, 224])
    sigma_ratio: float = Field(0.25, gt=0.0)
    truncate: float = Field(2.0, gt=0.0)

    @field_validator("sizes")
    @classmethod
    def _positive(cls, value: list[int]) -> list[int]:
        if not value or any(p <= 0 for p in value):
            raise ValueError("patch sizes must be a nonempty list of positive integers")
        return value

    def clipped(self, edge: int) -> list[int]:
        """Sizes clipped to the shorter input edge, deduplicated, ascending."""
        return sorted({min(p, edge) for p in self.sizes})


# =============================================================================
# SYNTHETIC BENCHMARK
# =============================================================================

class SyntheticSpec(_Config):
    """Desk-scale stand-in for an attribute-annotated fine-grained dataset."""

    n_classes: int = Field(5, ge=2)
    n_features: int = Field(50, ge=1)
    k_true: int = Field(3, ge=1)
    map_height: int = Field(7, ge=1)
    map_width: int = Field(7, ge=1)
    n_train: int = Field(500, ge=2)
    n_test: int = Field(500, ge=1)
    amplitude_mean: float = Field(2.0, gt=0.0)
    amplitude_std: float = Field(0.25, ge=0.0)
    noise_std: float = Field(0.25, ge=0.0)
    bump_width: float = Field(2.0, gt=0.0)
    attribute_coupling: bool = True
    guessing_rate: float = Field(0.1, ge=0.0, lt=1.0)
    shared_features: bool = False
    seed: int = Field(RANDOM_SEED, ge=0)

    @model_validator(mode="after")
    def _feasible(self) -> "SyntheticSpec":
        if self.k_true > self.n_features:
            raise ValueError("k_true cannot exceed n_features")
        if not self.shared_features and self.k_true * self.n_classes > self.n_features:
            raise ValueError("k_true * n_classes exceeds n_features; enable shared_features")
        return self


# =============================================================================
# PIPELINE
# =============================================================================

class StageToggles(_Config):
    train_dense: bool = True
    select_features: bool = True
    finetune: bool = True


def _default_dense() -> "FinetuneConfig":
    return FinetuneConfig(
        epochs=30, lr=1e-2, momentum=0.9, feature_dropout=0.2,
        lr_decay=LrDecay(every=10, factor=0.4), freeze_support=False,
    )


class PipelineConfig(_Config):
    """Full experiment: data, stage configs, seeds and output location."""

    synthetic: SyntheticSpec = SyntheticSpec()
    dataset_dir: Path | None = None
    output_dir: Path = ARTIFACTS_DIR
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    stages: StageToggles = StageToggles()
    solver: SolverConfig = SolverConfig()
    selection: SelectionConfig = SelectionConfig()
    sparsify: SparsifyConfig = SparsifyConfig()
    dense: FinetuneConfig = Field(default_factory=_default_dense)
    finetune: FinetuneConfig = FinetuneConfig()
    metrics: MetricsConfig = MetricsConfig()
    localization: PatchSchedule = PatchSchedule()

    @model_validator(mode="after")
    def _consistent(self) -> "PipelineConfig":
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be unique")
        if self.selection.n_target > self.synthetic.n_features:
            raise ValueError("selection.n_target cannot exceed the number of features")
        return self


# =============================================================================
# LOADING
# =============================================================================

def apply_override(document: dict[str, Any], assignment: str) -> dict[str, Any]:
    """Applies one `section.key=value` override; the value is parsed as a YAML scalar or list.

    Raises:
        ConfigurationError: If the assignment has no `=` or an empty key.
    """
    key, sep, raw = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigurationError(f"override {assignment!r} must look like section.key=value")
    parts = key.strip().split(".")
    node = document
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigurationError(f"override {assignment!r} descends into the scalar {part!r}")
        node = child
    node[parts[-1]] = yaml.safe_load(raw)
    return document


def load_pipeline_config(path: Path | None = None, overrides: list[str] | None = None) -> PipelineConfig:
    """Reads a YAML config document, applies CLI overrides and validates it.

    Args:
        path (Path | None): YAML file; None starts from the defaults.
        overrides (list[str] | None): `section.key=value` assignments.

    Returns:
        PipelineConfig: The validated configuration.

    Raises:
        ArtifactError: If the file cannot be read.
        ConfigurationError: If the document is not a mapping.
        pydantic.ValidationError: If a value violates the schema.
    """
    document: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ArtifactError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path.name} is not valid YAML: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigurationError(f"{path.name} must hold a mapping at the top level")
        document = loaded or {}
    for assignment in overrides or []:
        apply_override(document, assignment)
    return PipelineConfig.model_validate(document)
