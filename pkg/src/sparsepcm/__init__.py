"""Sparse pairwise comparison matrix completion and ranking."""

from .core import (
    ComparisonSet,
    ConsistencyReport,
    DensePcm,
    ScoreVector,
    ValidationReport,
    complete_from_scores,
    consistency_report,
    principal_eigen,
    reciprocal_projection,
    triangle_residuals,
    validate,
)
from .lls import assemble, lls_complete, lls_scores, solve

__version__ = "0.1.0"

__all__ = [
    "ComparisonSet",
    "ConsistencyReport",
    "DensePcm",
    "ScoreVector",
    "ValidationReport",
    "assemble",
    "complete_from_scores",
    "consistency_report",
    "lls_complete",
    "lls_scores",
    "principal_eigen",
    "reciprocal_projection",
    "solve",
    "triangle_residuals",
    "validate",
]
