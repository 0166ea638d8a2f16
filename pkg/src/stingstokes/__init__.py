"""Divergence-free P4 Stokes velocities with locally recovered P3 pressures.

The velocity comes from a clamped C1 Argyris stream function; the pressure is
assembled afterwards from small per-triangle and per-vertex problems.
"""

from .argyris import ArgyrisSpace, StreamField, build_dof_map, expected_free_dofs
from .harness import (
    convergence_study, error_norms, hermite_interpolant, manufactured_case, solve,
)
from .mesh import (
    Triangulation, VertexClass, build_triangulation, classify_vertices, generate_crisscross, validate,
    vertex_patch,
)
from .pressure import PressureComponents, PressureField, recover_pressure
from .velocity import AnalyticLoad, ReferenceLoad, ZeroLoad, solve_stokes_velocity

__version__ = "0.1.0"

__all__ = [
    "AnalyticLoad", "ArgyrisSpace", "PressureComponents", "PressureField", "ReferenceLoad",
    "StreamField", "Triangulation", "VertexClass", "ZeroLoad", "build_dof_map",
    "build_triangulation", "classify_vertices", "convergence_study", "error_norms",
    "expected_free_dofs", "generate_crisscross", "hermite_interpolant", "manufactured_case",
    "recover_pressure", "solve", "solve_stokes_velocity", "validate", "vertex_patch",
]
