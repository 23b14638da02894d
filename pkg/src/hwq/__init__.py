"""Hierarchical B-spline mass matrices by weighted quadrature."""

from .assembly import SparseMatrix, compute_matrix
from .gauss import assemble_mass_gauss, assemble_rhs, l2_error, l2_error_indicators
from .geometry import GeometryMap, make_geometry
from .hierarchy import (
    HierarchicalBasis,
    HierarchicalMesh,
    admissible_refine,
    build_hierarchy,
    classify_basis_functions,
    compute_active_basis,
    dorfler_mark,
)
from .experiment import ExperimentConfig, run_experiment
from .wq import preprocessing, wq_rule_apply

__all__ = [
    "ExperimentConfig",
    "GeometryMap",
    "HierarchicalBasis",
    "HierarchicalMesh",
    "SparseMatrix",
    "admissible_refine",
    "assemble_mass_gauss",
    "assemble_rhs",
    "build_hierarchy",
    "classify_basis_functions",
    "compute_active_basis",
    "compute_matrix",
    "dorfler_mark",
    "l2_error",
    "l2_error_indicators",
    "make_geometry",
    "preprocessing",
    "run_experiment",
    "wq_rule_apply",
]
