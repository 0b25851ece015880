"""Numerical laboratory for averaged space-time discretizations of the
stochastic p-Laplace system: flux algebra, P1 finite elements on nested
unit-square meshes, coupled sampling of standard and averaged Wiener
increments, three implicit schemes, and the convergence experiments."""

from .config import ExperimentConfig, parse_config
from .errors import MetricKind, monte_carlo, trajectory_distance
from .exact import ExactParams, build_references, scale_factor
from .flux import FluxParams, energy, natural_map, potential, stress, stress_jacobian
from .mesh import FeFunction, TriMesh, prolongate, refine_uniform, unit_square_mesh
from .noise import (CoarsenSpec, IncrementTable, NoiseModel, TimeGrid,
                    coarse_oracle, coarsen_increments, empirical_covariance,
                    path_points, sample_increment_table, stream)
from .schemes import NewtonConfig, SchemeKind, Trajectory, implicit_step, run_scheme

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "parse_config", "MetricKind", "monte_carlo",
    "trajectory_distance", "ExactParams", "build_references", "scale_factor",
    "FluxParams", "energy", "natural_map", "potential", "stress",
    "stress_jacobian", "FeFunction", "TriMesh", "prolongate", "refine_uniform",
    "unit_square_mesh", "CoarsenSpec", "IncrementTable", "NoiseModel",
    "TimeGrid", "coarse_oracle", "coarsen_increments", "empirical_covariance",
    "path_points", "sample_increment_table", "stream", "NewtonConfig",
    "SchemeKind", "Trajectory", "implicit_step", "run_scheme", "__version__",
]
