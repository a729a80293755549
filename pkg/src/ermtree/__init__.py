"""Globally optimal (empirical-risk-minimizing) decision trees and rate experiments."""

from .core import Cell, Dataset, Leaf, LossKind, RiskValue, Split, TreeModel, empirical_risk, leaf_value
from .errors import ConfigError, DataError, ErmTreeError, GuardRailError

__all__ = [
    "Cell", "ConfigError", "DataError", "Dataset", "ErmTreeError", "GuardRailError", "Leaf", "LossKind",
    "RiskValue", "Split", "TreeModel", "empirical_risk", "leaf_value",
]

__version__ = "0.1.0"
