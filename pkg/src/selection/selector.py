from dataclasses import dataclass, field

import numpy as np

from src.core.containers import FeatureMatrix, LabelVector
from src.exceptions import ConfigurationError, SelectionExhaustedError
from src.schemas import SelectionConfig, SolverConfig
from src.solver.path import PathEntry, fit_path
from src.solver.prox import ProxSpec


@dataclass(frozen=True)
class SelectionRecord:
    restart_index: int
    added_feature: int
    lambda_at_entry: float
    column_norm: float


@dataclass(frozen=True)
class SelectionState:
    """Ordered selected features N_f* and one provenance record per restart."""

    selected: tuple[int, ...] = ()
    history: tuple[SelectionRecord, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if len(set(self.selected)) != len(self.selected):
            raise ConfigurationError("selected features must be unique")
        if len(self.history) != len(self.selected):
            raise ConfigurationError("one history record per selected feature is required")

    def add(self, record: SelectionRecord) -> "SelectionState":
        return SelectionState(self.selected + (record.added_feature,), self.history + (record,))

    def prefix(self, n: int) -> "SelectionState":
        """The state after the first `n` restarts."""
        return SelectionState(self.selected[:n], self.history[:n])


class FeatureSelector:
    """Greedy feature selection by restarted gated group-lasso paths.

    Each restart runs the regularization path with the gated group prox
    (selected features plus the single maximum-norm candidate) and stops at
    the first solution that uses a feature outside the selected set; that
    feature is appended and the path restarts from lambda_max.
    """

    def __init__(self, solver_config: SolverConfig, selection_config: SelectionConfig, verbose: bool = False) -> None:
        self.selection_config: SelectionConfig = selection_config
        self.solver_config: SolverConfig = solver_config.model_copy(
            update={"alpha": selection_config.alpha, "lambda_scale": selection_config.lambda_scale}
        )
        self.verbose: bool = verbose

    def restart(self, feats: FeatureMatrix, labels: LabelVector, state: SelectionState) -> SelectionRecord:
        """Runs one gated path and returns the feature that entered first.

        Raises:
            SelectionExhaustedError: If the path ends without a new feature.
        """
        selected = set(state.selected)

        def new_features(entry: PathEntry) -> set[int]:
            return set(entry.model.used_features.tolist()) - selected

        path = fit_path(
            feats,
            labels,
            self.solver_config,
            prox=ProxSpec.gated(selected),
            stop_when=lambda entry: bool(new_features(entry)),
        )
        for entry in path:
            entering = new_features(entry)
            if entering:
                # The gate admits one candidate per step
                feature = min(entering)
                norm = float(np.linalg.norm(entry.model.weights[:, feature]))
                return SelectionRecord(len(state.selected), feature, entry.lambda_, norm)
        raise SelectionExhaustedError(len(state.selected), self.selection_config.n_target)

    def select(self, feats: FeatureMatrix, labels: LabelVector, n_target: int | None = None) -> SelectionState:
        n_target = self.selection_config.n_target if n_target is None else n_target
        if not 1 <= n_target <= feats.n_features:
            raise ConfigurationError(f"n_target must lie in [1, {feats.n_features}], got {n_target}")
        if not feats.normalized:
            raise ConfigurationError("feature selection expects standardized features")

        state = SelectionState()
        while len(state.selected) < n_target:
            record = self.restart(feats, labels, state)
            state = state.add(record)
            if self.verbose:
                print(
                    f"   ➕ restart {record.restart_index:3d}: feature {record.added_feature:4d} "
                    f"(λ={record.lambda_at_entry:.3e}, ‖w‖={record.column_norm:.3e})"
                )
        return state


def select_features(
    feats: FeatureMatrix,
    labels: LabelVector,
    n_target: int,
    config: SolverConfig,
    selection: SelectionConfig | None = None,
    verbose: bool = False,
) -> SelectionState:
    """Selects `n_target` features, exactly one per restart.

    Args:
        feats (FeatureMatrix): Standardized training features.
        labels (LabelVector): Class labels.
        n_target (int): Number of features to select (<= F).
        config (SolverConfig): Base solver settings; alpha and lambda scale
            are overridden by the selection settings.
        selection (SelectionConfig | None): Defaults to alpha 0.8 and a 0.1
            lambda scale.
        verbose (bool): Print one line per restart.

    Returns:
        SelectionState: Selected features in order of entry.
    """
    selection = selection or SelectionConfig(n_target=n_target)
    return FeatureSelector(config, selection, verbose=verbose).select(feats, labels, n_target)
