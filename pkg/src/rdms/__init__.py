"""Finite-volume and multiscale solvers for competing-species reaction-diffusion systems."""

__version__ = "0.1.0"

from .fvm import CellCoefficients, CoefficientField, SpeciesState
from .grid import (
    CoarseGrid,
    FineGrid,
    PartitionOfUnity,
    SubdomainMap,
    build_coarse_grid,
    build_partition_of_unity,
    build_structured_grid,
    generate_inclusions,
    mark_inclusions,
)
from .linalg import LinearSolveSpec
from .metrics import compute_averages, compute_relative_l2
from .schemas import ExperimentConfig
from .timestepping import TimeSteppingConfig, solve_ode_reference, solve_transient

__all__ = [
    "CellCoefficients",
    "CoefficientField",
    "SpeciesState",
    "CoarseGrid",
    "FineGrid",
    "PartitionOfUnity",
    "SubdomainMap",
    "build_coarse_grid",
    "build_partition_of_unity",
    "build_structured_grid",
    "generate_inclusions",
    "mark_inclusions",
    "LinearSolveSpec",
    "compute_averages",
    "compute_relative_l2",
    "ExperimentConfig",
    "TimeSteppingConfig",
    "solve_ode_reference",
    "solve_transient",
    "__version__",
]
