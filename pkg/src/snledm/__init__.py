"""Anchored sensor-network localization via Euclidean distance matrix
completion: facially reduced semidefinite relaxations solved with a
Gauss-Newton primal-dual path-following method."""

from .model import (
    Instance,
    PartialEdm,
    build_partial_edm,
    center_anchors,
    derive_constants,
    generate,
    load_instance,
    save_instance,
)
from .pipeline import localize_solution, prepare, solve_instance
from .relax import Formulation, PrimalDualPoint
from .solve import SolveResult, SolverConfig, solve

__all__ = [
    "Instance", "PartialEdm", "build_partial_edm", "center_anchors",
    "derive_constants", "generate", "load_instance", "save_instance",
    "localize_solution", "prepare", "solve_instance",
    "Formulation", "PrimalDualPoint",
    "SolveResult", "SolverConfig", "solve",
]

__version__ = "0.1.0"
