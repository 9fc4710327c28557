"""Multiclass diffuse-interface segmentation of graph-structured data."""

__version__ = "0.1.0"

from .errors import ConfigurationError, DegenerateScaleError, DivergenceError, FormatError
from .evaluation import RunStatistics, aggregate, confusion, error_rate
from .graph import GraphConfig, NeighborGraph, build_graph, knn_search, laplacian, local_scales
from .segmenter import (
    AnnealedEps,
    EnergyBreakdown,
    FidelityData,
    FixedEps,
    SegmentationResult,
    SolverConfig,
    energy,
    gradient,
    greedy_reassign,
    run,
)

__all__ = [
    "AnnealedEps",
    "ConfigurationError",
    "DegenerateScaleError",
    "DivergenceError",
    "EnergyBreakdown",
    "FidelityData",
    "FixedEps",
    "FormatError",
    "GraphConfig",
    "NeighborGraph",
    "RunStatistics",
    "SegmentationResult",
    "SolverConfig",
    "aggregate",
    "build_graph",
    "confusion",
    "energy",
    "error_rate",
    "gradient",
    "greedy_reassign",
    "knn_search",
    "laplacian",
    "local_scales",
    "run",
]
