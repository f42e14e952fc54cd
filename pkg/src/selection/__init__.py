from src.selection.selector import FeatureSelector, SelectionRecord, SelectionState, select_features
from src.solver.prox import prox_group_gated

__all__ = ["FeatureSelector", "SelectionRecord", "SelectionState", "prox_group_gated", "select_features"]
