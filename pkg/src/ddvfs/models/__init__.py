"""Energy and execution-time regressors and their evaluation tools."""

from .analysis import DEFAULT_GRID, ImportanceReport, feature_importance, grid_search, threshold_analysis
from .base import FittedModel, GBTConfig, Tree, predict, predict_features
from .gbt import fit_gbt, staged_predict
from .linear import fit_lasso, fit_ols

__all__ = [
    "DEFAULT_GRID",
    "FittedModel",
    "GBTConfig",
    "ImportanceReport",
    "Tree",
    "feature_importance",
    "fit_gbt",
    "fit_lasso",
    "fit_ols",
    "grid_search",
    "predict",
    "predict_features",
    "staged_predict",
    "threshold_analysis",
]
