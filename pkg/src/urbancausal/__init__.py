"""Causal discovery, effect estimation, and causal feature selection for
regional factor tables."""

from . import dataset, discovery, effects, prediction, presets
from .dataset import (
    DEFAULT_SCHEMA,
    Dimension,
    FactorMeta,
    FactorTable,
    TreatmentAssignment,
    correlation_matrix,
    generate_synthetic_sem,
    load_factor_table,
    quantile_levels,
    standardize,
)
from .graph import CausalGraph, ancestors, causal_order, empty_graph

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_SCHEMA",
    "CausalGraph",
    "Dimension",
    "FactorMeta",
    "FactorTable",
    "TreatmentAssignment",
    "ancestors",
    "causal_order",
    "correlation_matrix",
    "dataset",
    "discovery",
    "effects",
    "empty_graph",
    "generate_synthetic_sem",
    "load_factor_table",
    "prediction",
    "presets",
    "quantile_levels",
    "standardize",
]
