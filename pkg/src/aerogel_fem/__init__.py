"""Finite-element simulator for a skeleton/gas/fiber aerogel composite.

Two decoupled solvers share one P1 kernel: a quasi-static poro-mechanics
solver (gas pressure plus skeleton and fiber displacements) and a
three-temperature heat solver with cubic interphase exchange.
"""
from .constitutive import MechParams, PoreSize, ThermalParams
from .mechanics import MechanicsSolver, MechBCs, MechOptions, MechState, mech_step, postprocess_darcy
from .mesh import BoundaryTag, Mesh, generate_rect_mesh
from .thermal import NewtonSettings, ThermalSolver, ThermalState, centerline_profile, thermal_step

__all__ = [
    "BoundaryTag", "MechBCs", "MechOptions", "MechParams", "MechState", "MechanicsSolver", "Mesh",
    "NewtonSettings", "PoreSize", "ThermalParams", "ThermalSolver", "ThermalState", "centerline_profile",
    "generate_rect_mesh", "mech_step", "postprocess_darcy", "thermal_step",
]
__version__ = "0.1.0"
