"""Finite-element laboratory for p-Laplacian problems with reactions concentrated
on a thin oscillating boundary strip, and their homogenized Neumann limits."""

__version__ = "0.1.0"

from .geometry import ConfigError, MeshParams, ModelFunctions, ProblemConfig, SolverParams, mu
from .meshing import TriangleMesh, build_cylinder_mesh, build_rough_mesh, locate_point
from .fem import FemField, NewtonError, field_error, jacobian, newton_solve, norm_W1p, residual
from .concentrated import (apply_concentrated_functional, concentrated_integral, verify_concentration,
                           verify_lipschitz, verify_uniform_bound)
from .rough import RoughSolution, energy_check, solve_rough
from .limit import LimitSolution, boundary_residual, solve_limit
from .lab import SweepReport, mesh_resolution_study, run_theorem_sweep

__all__ = [
    "ConfigError", "MeshParams", "ModelFunctions", "ProblemConfig", "SolverParams", "mu",
    "TriangleMesh", "build_cylinder_mesh", "build_rough_mesh", "locate_point",
    "FemField", "NewtonError", "field_error", "jacobian", "newton_solve", "norm_W1p", "residual",
    "apply_concentrated_functional", "concentrated_integral", "verify_concentration",
    "verify_lipschitz", "verify_uniform_bound",
    "RoughSolution", "energy_check", "solve_rough",
    "LimitSolution", "boundary_residual", "solve_limit",
    "SweepReport", "mesh_resolution_study", "run_theorem_sweep",
]
